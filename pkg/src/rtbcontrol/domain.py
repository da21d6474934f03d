"""Shared vocabulary: KPIs, levers, goals, campaign configuration and inventory."""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np


class KpiKind(str, Enum):
    PACING = "pacing"
    CPC = "cpc"
    CPA = "cpa"
    VIEWABILITY = "viewability"


class LeverKind(str, Enum):
    TOLERANCE = "tolerance"
    BID_MULTIPLIER = "bid_multiplier"
    VIEWABILITY_THRESHOLD = "viewability_threshold"


class Direction(str, Enum):
    AT_MOST = "at_most"
    AT_LEAST = "at_least"


DEFAULT_DIRECTION = {
    KpiKind.PACING: Direction.AT_LEAST,
    KpiKind.CPC: Direction.AT_MOST,
    KpiKind.CPA: Direction.AT_MOST,
    KpiKind.VIEWABILITY: Direction.AT_LEAST,
}


@dataclass(frozen=True)
class ImpressionRecord:
    """One historical auction opportunity.

    ``predicted_view_prob`` is ``None`` when the exchange supplied no view
    prediction; that is distinct from a prediction of 0.
    ``clearing_price`` is in CPM.
    """

    predicted_ctr: float
    predicted_view_prob: float | None
    clearing_price: float
    clicked: bool = False
    viewable: bool = False
    converted: bool = False

    def __post_init__(self) -> None:
        problems = record_violations(
            self.predicted_ctr, self.predicted_view_prob, self.clearing_price
        )
        if problems:
            raise ValueError("; ".join(problems))


def record_violations(ctr: float, view_prob: float | None, clearing: float) -> list[str]:
    problems = []
    if not (0.0 <= ctr <= 1.0):
        problems.append(f"predicted_ctr must lie in [0, 1], got {ctr!r}")
    if view_prob is not None and not (0.0 <= view_prob <= 1.0):
        problems.append(f"predicted_view_prob must lie in [0, 1], got {view_prob!r}")
    if not (clearing >= 0.0 and math.isfinite(clearing)):
        problems.append(f"clearing_price must be finite and >= 0, got {clearing!r}")
    return problems


def _frozen(values: Any, dtype: Any) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Inventory(Sequence[ImpressionRecord]):
    """Columnar, read-only log of impression records.

    Behaves as a sequence of :class:`ImpressionRecord`; the simulator works on
    the underlying arrays. Absent view probabilities are stored as NaN.
    """

    predicted_ctr: np.ndarray
    predicted_view_prob: np.ndarray
    clearing_price: np.ndarray
    clicked: np.ndarray
    viewable: np.ndarray
    converted: np.ndarray

    def __post_init__(self) -> None:
        for name, dtype in (
            ("predicted_ctr", np.float64),
            ("predicted_view_prob", np.float64),
            ("clearing_price", np.float64),
            ("clicked", np.bool_),
            ("viewable", np.bool_),
            ("converted", np.bool_),
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        n = self.predicted_ctr.shape[0]
        for name in ("predicted_view_prob", "clearing_price", "clicked", "viewable", "converted"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"column {name} has length {getattr(self, name).shape[0]}, expected {n}")
        ctr, vp, price = self.predicted_ctr, self.predicted_view_prob, self.clearing_price
        if np.any(~((ctr >= 0.0) & (ctr <= 1.0))):
            raise ValueError("predicted_ctr must lie in [0, 1]")
        present = ~np.isnan(vp)
        if np.any(~((vp[present] >= 0.0) & (vp[present] <= 1.0))):
            raise ValueError("predicted_view_prob must lie in [0, 1] when present")
        if np.any(~(np.isfinite(price) & (price >= 0.0))):
            raise ValueError("clearing_price must be finite and >= 0")

    @classmethod
    def from_records(cls, records: Iterable[ImpressionRecord]) -> Inventory:
        records = list(records)
        return cls(
            predicted_ctr=[r.predicted_ctr for r in records],
            predicted_view_prob=[
                np.nan if r.predicted_view_prob is None else r.predicted_view_prob for r in records
            ],
            clearing_price=[r.clearing_price for r in records],
            clicked=[r.clicked for r in records],
            viewable=[r.viewable for r in records],
            converted=[r.converted for r in records],
        )

    @classmethod
    def coerce(cls, inventory: Inventory | Iterable[ImpressionRecord]) -> Inventory:
        if isinstance(inventory, Inventory):
            return inventory
        return cls.from_records(inventory)

    def __len__(self) -> int:
        return int(self.predicted_ctr.shape[0])

    def _record(self, i: int) -> ImpressionRecord:
        vp = float(self.predicted_view_prob[i])
        return ImpressionRecord(
            predicted_ctr=float(self.predicted_ctr[i]),
            predicted_view_prob=None if math.isnan(vp) else vp,
            clearing_price=float(self.clearing_price[i]),
            clicked=bool(self.clicked[i]),
            viewable=bool(self.viewable[i]),
            converted=bool(self.converted[i]),
        )

    def __getitem__(self, key):  # type: ignore[override]
        if isinstance(key, slice):
            return self.take(np.arange(len(self))[key])
        i = int(key)
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(key)
        return self._record(i)

    def __iter__(self) -> Iterator[ImpressionRecord]:
        for i in range(len(self)):
            yield self._record(i)

    def take(self, indices: np.ndarray) -> Inventory:
        return Inventory(
            predicted_ctr=self.predicted_ctr[indices],
            predicted_view_prob=self.predicted_view_prob[indices],
            clearing_price=self.clearing_price[indices],
            clicked=self.clicked[indices],
            viewable=self.viewable[indices],
            converted=self.converted[indices],
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Inventory):
            return NotImplemented
        return (
            np.array_equal(self.predicted_ctr, other.predicted_ctr)
            and np.array_equal(self.predicted_view_prob, other.predicted_view_prob, equal_nan=True)
            and np.array_equal(self.clearing_price, other.clearing_price)
            and np.array_equal(self.clicked, other.clicked)
            and np.array_equal(self.viewable, other.viewable)
            and np.array_equal(self.converted, other.converted)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class KpiGoal:
    kind: KpiKind
    goal_value: float
    direction: Direction | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", KpiKind(self.kind))
        if self.direction is None:
            object.__setattr__(self, "direction", DEFAULT_DIRECTION[self.kind])
        else:
            object.__setattr__(self, "direction", Direction(self.direction))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "goal_value": self.goal_value, "direction": self.direction.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> KpiGoal:
        return cls(
            kind=KpiKind(data["kind"]),
            goal_value=float(data["goal_value"]),
            direction=Direction(data["direction"]) if data.get("direction") else None,
        )


@dataclass(frozen=True)
class CampaignConfig:
    """Campaign settings. The order of ``goals`` is the priority order (first = highest)."""

    budget: float
    value_per_click: float
    min_bid: float
    max_bid: float
    num_intervals: int
    auctions_per_interval: int
    goals: tuple[KpiGoal, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "goals", tuple(self.goals))

    @property
    def priorities(self) -> tuple[KpiKind, ...]:
        return tuple(g.kind for g in self.goals)

    def goal_for(self, kind: KpiKind) -> KpiGoal:
        for g in self.goals:
            if g.kind is kind:
                return g
        raise KeyError(kind)

    def with_goals(self, goals: Iterable[KpiGoal]) -> CampaignConfig:
        return replace(self, goals=tuple(goals))

    def to_dict(self) -> dict[str, Any]:
        return {
            "budget": self.budget,
            "value_per_click": self.value_per_click,
            "min_bid": self.min_bid,
            "max_bid": self.max_bid,
            "num_intervals": self.num_intervals,
            "auctions_per_interval": self.auctions_per_interval,
            "goals": [g.to_dict() for g in self.goals],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CampaignConfig:
        return cls(
            budget=float(data["budget"]),
            value_per_click=float(data["value_per_click"]),
            min_bid=float(data["min_bid"]),
            max_bid=float(data["max_bid"]),
            num_intervals=int(data["num_intervals"]),
            auctions_per_interval=int(data["auctions_per_interval"]),
            goals=tuple(KpiGoal.from_dict(g) for g in data.get("goals", [])),
        )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ConfigError(ValueError):
    """Raised with every violated invariant, not just the first."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def config_violations(config: CampaignConfig) -> list[Violation]:
    out: list[Violation] = []
    if not config.goals:
        out.append(Violation("EmptyGoalList", "at least one KPI goal is required"))
    seen: set[KpiKind] = set()
    for g in config.goals:
        if g.kind in seen:
            out.append(Violation("DuplicatePriority", f"{g.kind.value} appears more than once"))
        seen.add(g.kind)
        if not (g.goal_value > 0 and math.isfinite(g.goal_value)):
            out.append(Violation("NonPositiveGoal", f"{g.kind.value} goal must be > 0, got {g.goal_value!r}"))
    if config.min_bid > config.max_bid:
        out.append(Violation("BidCapInverted", f"min_bid {config.min_bid} > max_bid {config.max_bid}"))
    if config.min_bid < 0:
        out.append(Violation("NegativeMinBid", f"min_bid must be >= 0, got {config.min_bid}"))
    if not config.budget >= 0:
        out.append(Violation("NegativeBudget", f"budget must be >= 0, got {config.budget}"))
    if not config.value_per_click > 0:
        out.append(Violation("NonPositiveValuePerClick", f"value_per_click must be > 0, got {config.value_per_click}"))
    if config.num_intervals < 1:
        out.append(Violation("InvalidIntervalCount", f"num_intervals must be >= 1, got {config.num_intervals}"))
    if config.auctions_per_interval < 1:
        out.append(Violation("InvalidIntervalSize", f"auctions_per_interval must be >= 1, got {config.auctions_per_interval}"))
    return out


def validate_config(config: CampaignConfig) -> CampaignConfig:
    """Return ``config`` unchanged, or raise :class:`ConfigError` listing every violation."""
    violations = config_violations(config)
    if violations:
        raise ConfigError(violations)
    return config


@dataclass(frozen=True)
class LeverState:
    bid_multiplier: float = 1.0
    tolerance: float = 0.0
    viewability_threshold: float = 0.01

    def get(self, lever: LeverKind) -> float:
        return getattr(self, LeverKind(lever).value)

    def with_value(self, lever: LeverKind, value: float) -> LeverState:
        return replace(self, **{LeverKind(lever).value: value})

    def to_dict(self) -> dict[str, float]:
        return {lever.value: self.get(lever) for lever in LeverKind}


INITIAL_LEVERS = LeverState()


_DEFAULT_ROWS = {
    KpiKind.PACING: (-0.5, 0.5, 0.0),
    KpiKind.CPC: (-0.5, 0.5, 0.0),
    # CPA shares the CPC row: same levers, conversions in place of clicks.
    KpiKind.CPA: (-0.5, 0.5, 0.0),
    KpiKind.VIEWABILITY: (0.0, 0.0, 1.0),
}
_LEVER_COLUMNS = (LeverKind.TOLERANCE, LeverKind.BID_MULTIPLIER, LeverKind.VIEWABILITY_THRESHOLD)


@dataclass(frozen=True)
class WeightMatrix:
    """Signed (KPI, lever) weights; a positive weight moves the lever up to raise the KPI."""

    weights: Mapping[tuple[KpiKind, LeverKind], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "weights",
            {(KpiKind(k), LeverKind(l)): float(w) for (k, l), w in self.weights.items()},
        )

    @classmethod
    def default(cls) -> WeightMatrix:
        return cls(
            {
                (kpi, lever): w
                for kpi, row in _DEFAULT_ROWS.items()
                for lever, w in zip(_LEVER_COLUMNS, row)
            }
        )

    def weight(self, kpi: KpiKind, lever: LeverKind) -> float:
        return self.weights.get((kpi, lever), 0.0)

    def row(self, kpi: KpiKind) -> dict[LeverKind, float]:
        return {lever: self.weight(kpi, lever) for lever in LeverKind}

    def with_weight(self, kpi: KpiKind, lever: LeverKind, value: float) -> WeightMatrix:
        updated = dict(self.weights)
        updated[(KpiKind(kpi), LeverKind(lever))] = value
        return WeightMatrix(updated)

    def to_dict(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for (kpi, lever), w in sorted(self.weights.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            out.setdefault(kpi.value, {})[lever.value] = w
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, float]]) -> WeightMatrix:
        return cls({(KpiKind(k), LeverKind(l)): w for k, row in data.items() for l, w in row.items()})
