"""Choosing which KPI(s) the actuator works on in a given interval."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

from .controller import ControlSignal
from .domain import KpiKind


class Method(str, Enum):
    BASELINE = "baseline"
    ALL_AT_ONCE = "aao"
    SIMPLE_SEQUENTIAL = "simple"
    SMART_SEQUENTIAL = "smart"


class PriorityOutOfRange(ValueError):
    pass


class MissingSignal(KeyError):
    pass


@dataclass(frozen=True)
class SelectorConfig:
    method: Method = Method.SIMPLE_SEQUENTIAL
    acceptability_threshold: float = 0.05
    exponential_base: float = 2.0
    # Empty means "use the campaign's goal order".
    priorities: tuple[KpiKind, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "priorities", tuple(KpiKind(k) for k in self.priorities))
        if not self.exponential_base >= 1:
            raise ValueError(f"exponential_base must be >= 1, got {self.exponential_base!r}")
        if not self.acceptability_threshold >= 0:
            raise ValueError(
                f"acceptability_threshold must be >= 0, got {self.acceptability_threshold!r}"
            )
        if len(set(self.priorities)) != len(self.priorities):
            raise ValueError("priorities contain duplicates")


@dataclass(frozen=True)
class Selection:
    chosen: tuple[KpiKind, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.chosen)


def adjusted_signal(phi: float, priority: int, total: int, base: float) -> float:
    """Scale ``phi`` by ``base ** (total - priority)``; priority 1 is the most important."""
    if not 1 <= priority <= total:
        raise PriorityOutOfRange(f"priority {priority} not in [1, {total}]")
    return base ** (total - priority) * phi


def _ordered_phis(
    signals: Mapping[KpiKind, ControlSignal], priorities: Sequence[KpiKind]
) -> list[tuple[KpiKind, float]]:
    out = []
    for kpi in priorities:
        try:
            out.append((kpi, signals[kpi].phi))
        except KeyError:
            raise MissingSignal(kpi) from None
    return out


def select_simple(signals: Mapping[KpiKind, ControlSignal], config: SelectorConfig) -> Selection:
    for kpi, phi in _ordered_phis(signals, config.priorities):
        if abs(phi) > config.acceptability_threshold:
            return Selection((kpi,))
    return Selection()


def adjusted_signals(
    signals: Mapping[KpiKind, ControlSignal], config: SelectorConfig
) -> dict[KpiKind, float]:
    ordered = _ordered_phis(signals, config.priorities)
    total = len(ordered)
    return {
        kpi: adjusted_signal(phi, p, total, config.exponential_base)
        for p, (kpi, phi) in enumerate(ordered, start=1)
    }


def select_smart(signals: Mapping[KpiKind, ControlSignal], config: SelectorConfig) -> Selection:
    ordered = _ordered_phis(signals, config.priorities)
    # Acceptability gate on the raw signals, so levers rest once everything is at goal.
    if all(abs(phi) <= config.acceptability_threshold for _, phi in ordered):
        return Selection()
    adjusted = adjusted_signals(signals, config)
    best_kpi, best = None, -1.0
    for kpi, _ in ordered:
        # Strict '>' keeps the higher-priority KPI on ties.
        if abs(adjusted[kpi]) > best:
            best_kpi, best = kpi, abs(adjusted[kpi])
    return Selection((best_kpi,))


def select_all(signals: Mapping[KpiKind, ControlSignal], config: SelectorConfig) -> Selection:
    return Selection(
        tuple(
            kpi
            for kpi, phi in _ordered_phis(signals, config.priorities)
            if abs(phi) > config.acceptability_threshold
        )
    )


def select(signals: Mapping[KpiKind, ControlSignal], config: SelectorConfig) -> Selection:
    if config.method is Method.BASELINE:
        return Selection()
    if config.method is Method.ALL_AT_ONCE:
        return select_all(signals, config)
    if config.method is Method.SIMPLE_SEQUENTIAL:
        return select_simple(signals, config)
    return select_smart(signals, config)
