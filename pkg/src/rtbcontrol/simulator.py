"""Second-price replay of impression logs with the feedback loop closed over it."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .actuator import LeverConstraints, LeverUpdate, apply
from .bidder import BID, CPM, BidDecision, NoBidReason, compute_bids
from .controller import ControlSignal, ErrorHistory, PidGains, compute_error, pid_signal
from .domain import (
    INITIAL_LEVERS,
    CampaignConfig,
    ConfigError,
    ImpressionRecord,
    Inventory,
    KpiKind,
    LeverKind,
    LeverState,
    Violation,
    WeightMatrix,
    validate_config,
)
from .selector import Method, Selection, SelectorConfig, adjusted_signals, select


class InventoryTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class AuctionOutcome:
    index: int
    decision: BidDecision
    won: bool
    cost: float


def settle_auction(decision: BidDecision, imp: ImpressionRecord, index: int = 0) -> AuctionOutcome:
    """Win when the bid reaches the clearing price; the winner pays the clearing price."""
    if decision.is_bid and decision.price >= imp.clearing_price:
        return AuctionOutcome(index, decision, True, imp.clearing_price / CPM)
    return AuctionOutcome(index, decision, False, 0.0)


@dataclass(frozen=True, eq=False)
class IntervalOutcome:
    """Per-auction results of one interval, as parallel arrays."""

    offset: int
    codes: np.ndarray
    prices: np.ndarray
    won: np.ndarray
    cost: np.ndarray
    clicked: np.ndarray
    viewable: np.ndarray
    converted: np.ndarray

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    @property
    def spend(self) -> float:
        return math.fsum(self.cost[self.won])

    @property
    def bids(self) -> int:
        return int(np.count_nonzero(self.codes == BID))

    @property
    def wins(self) -> int:
        return int(np.count_nonzero(self.won))

    @property
    def clicks(self) -> int:
        return int(np.count_nonzero(self.won & self.clicked))

    @property
    def conversions(self) -> int:
        return int(np.count_nonzero(self.won & self.converted))

    @property
    def viewable_wins(self) -> int:
        return int(np.count_nonzero(self.won & self.viewable))

    def outcomes(self) -> list[AuctionOutcome]:
        out = []
        for j in range(len(self)):
            code = int(self.codes[j])
            decision = (
                BidDecision.bid(float(self.prices[j]))
                if code == BID
                else BidDecision.no_bid(NoBidReason(code))
            )
            out.append(AuctionOutcome(self.offset + j, decision, bool(self.won[j]), float(self.cost[j])))
        return out


def run_interval(
    inventory: Inventory | Sequence[ImpressionRecord],
    levers: LeverState,
    config: CampaignConfig,
    remaining_budget: float,
    offset: int = 0,
) -> IntervalOutcome:
    """Replay one slice of inventory in order at fixed lever values.

    Equivalent to calling ``compute_bid`` then ``settle_auction`` record by
    record while accumulating spend; once ``remaining_budget - spent`` is no
    longer positive every later record is a ``BudgetExhausted`` no-bid.
    """
    inv = Inventory.coerce(inventory)
    codes, prices = compute_bids(inv, levers, config)
    clearing = inv.clearing_price
    with np.errstate(invalid="ignore"):
        won = (codes == BID) & (prices >= clearing)
    cost = np.where(won, clearing / CPM, 0.0)
    # Sequential (non-pairwise) running sum, same rounding as a Python loop.
    spent_before = np.concatenate(([0.0], np.cumsum(cost)[:-1])) if len(inv) else np.zeros(0)
    exhausted = ~((remaining_budget - spent_before) > 0)
    codes = codes.copy()
    codes[exhausted] = NoBidReason.BUDGET_EXHAUSTED
    prices = np.where(exhausted, np.nan, prices)
    won = won & ~exhausted
    cost = np.where(won, cost, 0.0)
    return IntervalOutcome(
        offset=offset,
        codes=codes,
        prices=prices,
        won=won,
        cost=cost,
        clicked=inv.clicked,
        viewable=inv.viewable,
        converted=inv.converted,
    )


@dataclass(frozen=True)
class KpiMeasurement:
    """Cumulative campaign KPIs; ratio KPIs are ``None`` while their denominator is zero."""

    spend: float
    pacing: float
    cpc: float | None
    cpa: float | None
    viewability: float | None
    bids: int = 0
    wins: int = 0
    clicks: int = 0
    conversions: int = 0
    viewable: int = 0

    def value(self, kind: KpiKind) -> float | None:
        return {
            KpiKind.PACING: self.pacing,
            KpiKind.CPC: self.cpc,
            KpiKind.CPA: self.cpa,
            KpiKind.VIEWABILITY: self.viewability,
        }[KpiKind(kind)]

    def to_dict(self) -> dict[str, float | int | None]:
        return {
            "spend": self.spend,
            "pacing": self.pacing,
            "cpc": self.cpc,
            "cpa": self.cpa,
            "viewability": self.viewability,
            "bids": self.bids,
            "wins": self.wins,
            "clicks": self.clicks,
            "conversions": self.conversions,
            "viewable": self.viewable,
        }


def _measurement(
    spend: float,
    bids: int,
    wins: int,
    clicks: int,
    conversions: int,
    viewable: int,
    config: CampaignConfig,
    elapsed_fraction: float,
) -> KpiMeasurement:
    if not 0 < elapsed_fraction <= 1:
        raise ValueError(f"elapsed_fraction must lie in (0, 1], got {elapsed_fraction!r}")
    scheduled = config.budget * elapsed_fraction
    return KpiMeasurement(
        spend=spend,
        pacing=spend / scheduled if scheduled > 0 else 0.0,
        cpc=spend / clicks if clicks else None,
        cpa=spend / conversions if conversions else None,
        viewability=viewable / wins if wins else None,
        bids=bids,
        wins=wins,
        clicks=clicks,
        conversions=conversions,
        viewable=viewable,
    )


def measure_kpis(
    outcomes: Iterable[AuctionOutcome],
    records: Sequence[ImpressionRecord],
    config: CampaignConfig,
    elapsed_fraction: float,
) -> KpiMeasurement:
    """KPIs over won auctions; ``records[o.index]`` is the record behind outcome ``o``."""
    costs = []
    bids = wins = clicks = conversions = viewable = 0
    for o in outcomes:
        bids += o.decision.is_bid
        if not o.won:
            continue
        rec = records[o.index]
        wins += 1
        costs.append(o.cost)
        clicks += rec.clicked
        conversions += rec.converted
        viewable += rec.viewable
    return _measurement(
        math.fsum(costs), bids, wins, clicks, conversions, viewable, config, elapsed_fraction
    )


@dataclass
class _Tally:
    costs: list[np.ndarray] = field(default_factory=list)
    bids: int = 0
    wins: int = 0
    clicks: int = 0
    conversions: int = 0
    viewable: int = 0

    def add(self, out: IntervalOutcome) -> None:
        self.costs.append(out.cost[out.won])
        self.bids += out.bids
        self.wins += out.wins
        self.clicks += out.clicks
        self.conversions += out.conversions
        self.viewable += out.viewable_wins

    @property
    def spend(self) -> float:
        return math.fsum(np.concatenate(self.costs)) if self.costs else 0.0

    def measurement(self, config: CampaignConfig, elapsed_fraction: float) -> KpiMeasurement:
        return _measurement(
            self.spend, self.bids, self.wins, self.clicks, self.conversions, self.viewable,
            config, elapsed_fraction,
        )


@dataclass(frozen=True)
class IntervalReport:
    interval: int
    method: Method
    levers_start: LeverState
    levers_end: LeverState
    signals: tuple[ControlSignal, ...]
    adjusted: Mapping[KpiKind, float]
    selection: Selection
    lever_updates: tuple[LeverUpdate, ...]
    bids: int
    wins: int
    spend: float
    clicks: int
    conversions: int
    viewable: int
    measurement: KpiMeasurement
    budget_exhausted: bool

    def signal(self, kpi: KpiKind) -> ControlSignal:
        for s in self.signals:
            if s.kpi is kpi:
                return s
        raise KeyError(kpi)

    def to_dict(self) -> dict:
        return {
            "interval": self.interval,
            "method": self.method.value,
            "levers_start": self.levers_start.to_dict(),
            "levers_end": self.levers_end.to_dict(),
            "signals": [
                {
                    "kpi": s.kpi.value,
                    "phi": s.phi,
                    "adjusted_phi": self.adjusted.get(s.kpi),
                    "p_term": s.p_term,
                    "i_term": s.i_term,
                    "d_term": s.d_term,
                }
                for s in self.signals
            ],
            "selection": [k.value for k in self.selection.chosen],
            "lever_updates": [
                {
                    "lever": u.lever.value,
                    "previous": u.previous,
                    "proposed": u.proposed,
                    "final": u.final,
                    "clamp": u.clamp,
                }
                for u in self.lever_updates
            ],
            "interval_totals": {
                "bids": self.bids,
                "wins": self.wins,
                "spend": self.spend,
                "clicks": self.clicks,
                "conversions": self.conversions,
                "viewable": self.viewable,
            },
            "cumulative": self.measurement.to_dict(),
            "budget_exhausted": self.budget_exhausted,
        }

    def to_row(self) -> dict[str, object]:
        """Flat time-series row for CSV output."""
        row: dict[str, object] = {"interval": self.interval, "method": self.method.value}
        for lever in LeverKind:
            row[f"{lever.value}_start"] = self.levers_start.get(lever)
            row[f"{lever.value}_end"] = self.levers_end.get(lever)
        row["selection"] = "|".join(k.value for k in self.selection.chosen)
        for kpi in KpiKind:
            s = next((s for s in self.signals if s.kpi is kpi), None)
            row[f"phi_{kpi.value}"] = "" if s is None else s.phi
            row[f"adj_phi_{kpi.value}"] = "" if s is None else self.adjusted.get(kpi, "")
            row[f"p_{kpi.value}"] = "" if s is None else s.p_term
            row[f"i_{kpi.value}"] = "" if s is None else s.i_term
            row[f"d_{kpi.value}"] = "" if s is None else s.d_term
        clamps = {u.lever: u.clamp for u in self.lever_updates}
        for lever in LeverKind:
            row[f"clamp_{lever.value}"] = clamps.get(lever) or ""
        row.update(
            bids=self.bids, wins=self.wins, spend=self.spend, clicks=self.clicks,
            conversions=self.conversions, viewable=self.viewable,
        )
        for key, value in self.measurement.to_dict().items():
            row[f"cum_{key}"] = "" if value is None else value
        row["budget_exhausted"] = int(self.budget_exhausted)
        return row


def interval_slices(n: int, num_intervals: int) -> list[slice]:
    """Contiguous equal slices; the last one also takes the remainder."""
    size = n // num_intervals
    if size == 0:
        raise InventoryTooSmall(f"{n} records cannot fill {num_intervals} intervals")
    bounds = [i * size for i in range(num_intervals)] + [n]
    return [slice(bounds[i], bounds[i + 1]) for i in range(num_intervals)]


def resolve_selector(config: CampaignConfig, selector_config: SelectorConfig) -> SelectorConfig:
    if not selector_config.priorities:
        return SelectorConfig(
            method=selector_config.method,
            acceptability_threshold=selector_config.acceptability_threshold,
            exponential_base=selector_config.exponential_base,
            priorities=config.priorities,
        )
    if set(selector_config.priorities) != set(config.priorities):
        raise ConfigError(
            [
                Violation(
                    "PriorityMismatch",
                    "selector priorities must be a permutation of the campaign goal KPIs",
                )
            ]
        )
    return selector_config


def run_campaign(
    inventory: Inventory | Sequence[ImpressionRecord],
    config: CampaignConfig,
    selector_config: SelectorConfig,
    weights: WeightMatrix | None = None,
    gains: Mapping[KpiKind, PidGains] | None = None,
    constraints: LeverConstraints | None = None,
    initial_levers: LeverState = INITIAL_LEVERS,
) -> list[IntervalReport]:
    """Run the full loop: bid, measure, compute errors and signals, select, actuate.

    One report per interval. Once the budget is spent no further bids are
    placed and the levers are left where they are.
    """
    validate_config(config)
    inv = Inventory.coerce(inventory)
    sel = resolve_selector(config, selector_config)
    weights = weights or WeightMatrix.default()
    gains = dict(gains or {})
    for goal in config.goals:
        gains.setdefault(goal.kind, PidGains.for_goal(goal.goal_value))
    if constraints is None:
        constraints = LeverConstraints.from_ctrs(inv.predicted_ctr)
    slices = interval_slices(len(inv), config.num_intervals)

    levers = initial_levers
    history = ErrorHistory()
    tally = _Tally()
    reports = []
    for i, sl in enumerate(slices):
        remaining = config.budget - tally.spend
        out = run_interval(inv[sl], levers, config, remaining, offset=sl.start)
        tally.add(out)
        measurement = tally.measurement(config, (i + 1) / config.num_intervals)
        exhausted = not (config.budget - measurement.spend > 0)

        signals: dict[KpiKind, ControlSignal] = {}
        for goal in config.goals:
            measured = measurement.value(goal.kind)
            if measured is None:
                history.carry_forward(goal.kind, i)
            else:
                history.record(goal.kind, i, compute_error(goal, measured))
            if goal.kind in history:
                signals[goal.kind] = pid_signal(history, goal.kind, gains[goal.kind])
            else:
                signals[goal.kind] = ControlSignal.null(goal.kind)

        selection = Selection() if exhausted else select(signals, sel)
        new_levers, updates = apply(selection, signals, weights, levers, constraints)
        reports.append(
            IntervalReport(
                interval=i,
                method=sel.method,
                levers_start=levers,
                levers_end=new_levers,
                signals=tuple(signals[k] for k in sel.priorities),
                adjusted=adjusted_signals(signals, sel),
                selection=selection,
                lever_updates=tuple(updates),
                bids=out.bids,
                wins=out.wins,
                spend=out.spend,
                clicks=out.clicks,
                conversions=out.conversions,
                viewable=out.viewable_wins,
                measurement=measurement,
                budget_exhausted=exhausted,
            )
        )
        levers = new_levers
    return reports
