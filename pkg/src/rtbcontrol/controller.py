"""Per-KPI PID control signals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .domain import KpiGoal, KpiKind


class EmptyHistory(ValueError):
    pass


class NonFiniteMeasurement(ValueError):
    pass


@dataclass(frozen=True)
class PidGains:
    """Gain schedule. ``k_i = k_p / t_i`` and ``k_d = t_d * k_p``."""

    k_p: float
    t_i: int = 10
    t_d: int = 2

    def __post_init__(self) -> None:
        if self.t_i < 1 or self.t_d < 1:
            raise ValueError("t_i and t_d must be positive integers")

    @classmethod
    def for_goal(cls, goal_value: float, t_i: int = 10, t_d: int = 2) -> PidGains:
        if not goal_value > 0:
            raise ValueError(f"goal value must be > 0, got {goal_value!r}")
        return cls(k_p=1.0 / goal_value, t_i=t_i, t_d=t_d)

    @property
    def k_i(self) -> float:
        return self.k_p / self.t_i

    @property
    def k_d(self) -> float:
        return self.t_d * self.k_p


@dataclass(frozen=True)
class ControlSignal:
    kpi: KpiKind
    phi: float
    p_term: float = 0.0
    i_term: float = 0.0
    d_term: float = 0.0

    @classmethod
    def null(cls, kpi: KpiKind) -> ControlSignal:
        return cls(kpi=kpi, phi=0.0)


@dataclass
class ErrorHistory:
    """Error samples per KPI, keyed by interval index.

    Owned by the campaign loop; mutated between intervals only.
    """

    samples: dict[KpiKind, list[tuple[int, float]]] = field(default_factory=dict)

    def record(self, kpi: KpiKind, interval: int, error: float) -> None:
        series = self.samples.setdefault(kpi, [])
        if series and interval <= series[-1][0]:
            raise ValueError(
                f"interval {interval} for {kpi.value} is not after the last sample ({series[-1][0]})"
            )
        series.append((interval, float(error)))

    def carry_forward(self, kpi: KpiKind, interval: int) -> bool:
        """Repeat the last error at ``interval``; returns False if there is nothing to repeat."""
        series = self.samples.get(kpi)
        if not series:
            return False
        self.record(kpi, interval, series[-1][1])
        return True

    def errors(self, kpi: KpiKind) -> list[float]:
        return [e for _, e in self.samples.get(kpi, [])]

    def __contains__(self, kpi: object) -> bool:
        return bool(self.samples.get(kpi))  # type: ignore[call-overload]

    @classmethod
    def from_errors(cls, kpi: KpiKind, errors: list[float]) -> ErrorHistory:
        h = cls()
        for i, e in enumerate(errors):
            h.record(kpi, i, e)
        return h


def compute_error(goal: KpiGoal, measured: float) -> float:
    """Goal minus measurement, whatever the goal direction.

    Lever direction is carried by the weight-matrix signs, so AtMost KPIs
    (CPC, CPA) need no sign flip here.
    """
    if not math.isfinite(measured):
        raise NonFiniteMeasurement(f"measurement for {goal.kind.value} is not finite: {measured!r}")
    return goal.goal_value - measured


def pid_signal(history: ErrorHistory, kpi: KpiKind, gains: PidGains) -> ControlSignal:
    errors = history.errors(kpi)
    if not errors:
        raise EmptyHistory(f"no error samples for {kpi.value}")
    p = errors[-1]
    # Discrete integral over a window of t_i intervals, unit width.
    i = sum(errors[-gains.t_i:])
    d = errors[-1] - errors[-2] if len(errors) > 1 else 0.0
    phi = gains.k_p * p + gains.k_i * i + gains.k_d * d
    return ControlSignal(kpi=kpi, phi=phi, p_term=p, i_term=i, d_term=d)
