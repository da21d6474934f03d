"""Turning control signals into clamped lever moves."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .controller import ControlSignal
from .domain import KpiKind, LeverKind, LeverState, WeightMatrix
from .selector import MissingSignal, Selection


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class LeverBounds:
    min_value: float
    max_value: float
    max_change: float


@dataclass(frozen=True)
class LeverConstraints:
    bounds: Mapping[LeverKind, LeverBounds]

    def __getitem__(self, lever: LeverKind) -> LeverBounds:
        return self.bounds[lever]

    @classmethod
    def from_ctrs(cls, predicted_ctr: Sequence[float] | np.ndarray) -> LeverConstraints:
        """Default constraint table; the tolerance envelope comes from the CTR distribution."""
        tol_max = nearest_rank_percentile(predicted_ctr, 95)
        tol_step = nearest_rank_percentile(predicted_ctr, 50) / 5
        return cls.default(tol_max, tol_step)

    @classmethod
    def default(cls, tolerance_max: float, tolerance_max_change: float) -> LeverConstraints:
        return cls(
            {
                LeverKind.VIEWABILITY_THRESHOLD: LeverBounds(0.01, 0.6, 0.1),
                LeverKind.BID_MULTIPLIER: LeverBounds(0.1, 10.0, 1.0),
                LeverKind.TOLERANCE: LeverBounds(0.0, tolerance_max, tolerance_max_change),
            }
        )

    def contains(self, levers: LeverState) -> bool:
        return all(
            self[l].min_value <= levers.get(l) <= self[l].max_value for l in LeverKind
        )

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            l.value: {"min": b.min_value, "max": b.max_value, "max_change": b.max_change}
            for l, b in sorted(self.bounds.items(), key=lambda kv: kv[0].value)
        }


def nearest_rank_percentile(values: Sequence[float] | np.ndarray, pct: float) -> float:
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100.0 * arr.size))
    return float(arr[rank - 1])


def tolerance_floor(constraints: LeverConstraints) -> float:
    """Starting point for raising a zero tolerance: 1% of its ceiling."""
    return 0.01 * constraints[LeverKind.TOLERANCE].max_value


def propose_update(current: float, weight: float, phi: float) -> float:
    """``current * exp(weight * phi)``; a zero weight leaves the lever alone."""
    if not (math.isfinite(current) and math.isfinite(weight) and math.isfinite(phi)):
        raise NonFiniteInput(f"non-finite actuator input: current={current!r}, weight={weight!r}, phi={phi!r}")
    if weight == 0.0:
        return current
    try:
        return current * math.exp(weight * phi)
    except OverflowError:
        return math.inf if current > 0 else current


def _window(previous: float, bounds: LeverBounds) -> tuple[float, float]:
    lo = max(bounds.min_value, previous - bounds.max_change)
    hi = min(bounds.max_value, previous + bounds.max_change)
    # previous ± max_change can round one ulp past the step limit.
    while hi - previous > bounds.max_change:
        hi = math.nextafter(hi, -math.inf)
    while previous - lo > bounds.max_change:
        lo = math.nextafter(lo, math.inf)
    return lo, hi


def clamp_update(
    previous: float, proposed: float, constraints: LeverConstraints, lever: LeverKind
) -> float:
    return clamp_with_reason(previous, proposed, constraints, lever)[0]


def clamp_with_reason(
    previous: float, proposed: float, constraints: LeverConstraints, lever: LeverKind
) -> tuple[float, str | None]:
    """Limit the step to the per-interval cap, then clip to the lever's range.

    Returns the final value and which limit bound (``"max_change"``,
    ``"min"``, ``"max"`` or ``None``).
    """
    bounds = constraints[lever]
    lo, hi = _window(previous, bounds)
    if proposed > hi:
        return hi, "max" if hi == bounds.max_value else "max_change"
    if proposed < lo:
        return lo, "min" if lo == bounds.min_value else "max_change"
    return proposed, None


@dataclass(frozen=True)
class LeverUpdate:
    lever: LeverKind
    previous: float
    proposed: float
    final: float
    clamp: str | None


def apply(
    selection: Selection,
    signals: Mapping[KpiKind, ControlSignal],
    weights: WeightMatrix,
    levers: LeverState,
    constraints: LeverConstraints,
) -> tuple[LeverState, list[LeverUpdate]]:
    """Move every lever with a nonzero weight for the selected KPI(s).

    Several selected KPIs (All-At-Once) compose their proposals in selection
    order and are clamped once against the interval-start value.
    """
    for kpi in selection.chosen:
        if kpi not in signals:
            raise MissingSignal(kpi)
    updates: list[LeverUpdate] = []
    new_levers = levers
    for lever in LeverKind:
        active = [(kpi, weights.weight(kpi, lever)) for kpi in selection.chosen]
        active = [(kpi, w) for kpi, w in active if w != 0.0]
        if not active:
            continue
        previous = levers.get(lever)
        proposed = previous
        push = 0.0
        for kpi, w in active:
            if math.isinf(proposed):
                break
            phi = signals[kpi].phi
            base = proposed
            if lever is LeverKind.TOLERANCE and base <= 0.0 and w * phi > 0:
                base = tolerance_floor(constraints)
            proposed = propose_update(base, w, phi)
            push += w * phi
        final, reason = clamp_with_reason(previous, proposed, constraints, lever)
        # A lever resting on a bound and pushed outward does not move (zero is
        # a fixed point of the multiplicative update); report the bound.
        if reason is None and final == previous:
            bounds = constraints[lever]
            if push < 0 and previous <= bounds.min_value:
                reason = "min"
            elif push > 0 and previous >= bounds.max_value:
                reason = "max"
        updates.append(LeverUpdate(lever, previous, proposed, final, reason))
        new_levers = new_levers.with_value(lever, final)
    return new_levers, updates
