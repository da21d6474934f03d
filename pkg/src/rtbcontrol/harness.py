"""Method x priority-order experiment grids, compared against a no-control baseline."""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .domain import (
    DEFAULT_DIRECTION,
    CampaignConfig,
    Direction,
    Inventory,
    KpiGoal,
    KpiKind,
    WeightMatrix,
    validate_config,
)
from .iolayer import SynthesisParams, generate_inventory, sample_inventory
from .simulator import IntervalReport, KpiMeasurement, run_campaign
from .selector import Method, SelectorConfig

REPORT_KPIS = ("spend", "cpc", "cpa", "viewability")

# "Raise spend by 50%", "reduce CPA by 50%", "raise viewability by 20%".
DEFAULT_GOAL_RULES = {KpiKind.PACING: 1.5, KpiKind.CPA: 0.5, KpiKind.VIEWABILITY: 1.2}

DEFAULT_PRIORITY_ORDERS = (
    (KpiKind.VIEWABILITY, KpiKind.CPA, KpiKind.PACING),
    (KpiKind.PACING, KpiKind.VIEWABILITY, KpiKind.CPA),
    (KpiKind.CPA, KpiKind.PACING, KpiKind.VIEWABILITY),
)


class MissingBaselineKpi(ValueError):
    pass


def default_campaign_config() -> CampaignConfig:
    """Template campaign: one simulated day in four 6-hour control intervals.

    The budget is roughly twice what the baseline levers spend on the default
    synthetic inventory, so a +50% spend goal is reachable.
    """
    return validate_config(
        CampaignConfig(
            budget=400.0,
            value_per_click=0.4,
            min_bid=0.5,
            max_bid=20.0,
            num_intervals=4,
            auctions_per_interval=25_000,
            goals=(
                KpiGoal(KpiKind.PACING, 1.0),
                KpiGoal(KpiKind.CPA, 1.0),
                KpiGoal(KpiKind.VIEWABILITY, 0.5),
            ),
        )
    )


def default_synthesis() -> SynthesisParams:
    return SynthesisParams(
        count=100_000,
        ctr_median=0.01,
        ctr_sigma=0.6,
        view_mean=0.4,
        view_concentration=2.0,
        view_missing_rate=0.05,
        base_cpm=1.0,
        ctr_price_coef=0.2,
        view_price_coef=2.0,
        price_noise=0.5,
        conversion_rate=0.5,
    )


def derive_goals(
    baseline: KpiMeasurement, rules: Mapping[KpiKind, float] = DEFAULT_GOAL_RULES
) -> list[KpiGoal]:
    """Goal = multiplier x baseline value, in the order of ``rules``.

    The pacing rule scales the baseline's final pacing ratio, which at the
    end of the campaign is spend / budget, so it is a spend goal in disguise.
    """
    goals = []
    for kind, multiplier in rules.items():
        kind = KpiKind(kind)
        value = baseline.value(kind)
        if value is None:
            raise MissingBaselineKpi(f"baseline has no {kind.value} measurement")
        goals.append(KpiGoal(kind, multiplier * value))
    return goals


def percent_change(value: float | None, baseline: float | None) -> float | None:
    if value is None or baseline is None or baseline == 0:
        return None
    return 100.0 * (value - baseline) / baseline


def _report_values(m: KpiMeasurement) -> dict[str, float | None]:
    return {"spend": m.spend, "cpc": m.cpc, "cpa": m.cpa, "viewability": m.viewability}


_KPI_COLUMN = {
    KpiKind.PACING: "spend",
    KpiKind.CPC: "cpc",
    KpiKind.CPA: "cpa",
    KpiKind.VIEWABILITY: "viewability",
}


def improvement(pct_change: Mapping[str, float | None], kind: KpiKind) -> float | None:
    """Percent change oriented so that positive always means 'better'."""
    change = pct_change[_KPI_COLUMN[KpiKind(kind)]]
    if change is None:
        return None
    return -change if DEFAULT_DIRECTION[KpiKind(kind)] is Direction.AT_MOST else change


@dataclass(frozen=True)
class ExperimentSpec:
    campaign: CampaignConfig = field(default_factory=default_campaign_config)
    synthesis: SynthesisParams = field(default_factory=default_synthesis)
    methods: tuple[Method, ...] = (Method.ALL_AT_ONCE, Method.SIMPLE_SEQUENTIAL, Method.SMART_SEQUENTIAL)
    priority_orders: tuple[tuple[KpiKind, ...], ...] = DEFAULT_PRIORITY_ORDERS
    goal_rules: Mapping[KpiKind, float] = field(default_factory=lambda: dict(DEFAULT_GOAL_RULES))
    seeds: tuple[int, ...] = (0,)
    acceptability_threshold: float = 0.05
    exponential_base: float = 2.0
    sample_with_replacement: bool = False
    weights: WeightMatrix = field(default_factory=WeightMatrix.default)

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods if Method(m) is not Method.BASELINE))
        object.__setattr__(
            self, "priority_orders", tuple(tuple(KpiKind(k) for k in o) for o in self.priority_orders)
        )
        object.__setattr__(self, "goal_rules", {KpiKind(k): float(v) for k, v in self.goal_rules.items()})
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        kinds = set(self.goal_rules)
        for order in self.priority_orders:
            if set(order) != kinds or len(order) != len(kinds):
                raise ValueError(
                    f"priority order {[k.value for k in order]} is not a permutation of the goal KPIs"
                )
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @property
    def num_auctions(self) -> int:
        return self.campaign.num_intervals * self.campaign.auctions_per_interval

    def to_dict(self) -> dict[str, Any]:
        return {
            "campaign": self.campaign.to_dict(),
            "synthesis": self.synthesis.to_dict(),
            "methods": [m.value for m in self.methods],
            "priority_orders": [[k.value for k in o] for o in self.priority_orders],
            "goal_rules": {k.value: v for k, v in self.goal_rules.items()},
            "seeds": list(self.seeds),
            "acceptability_threshold": self.acceptability_threshold,
            "exponential_base": self.exponential_base,
            "sample_with_replacement": self.sample_with_replacement,
            "weights": self.weights.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentSpec:
        defaults = cls()
        campaign = data.get("campaign")
        synthesis = data.get("synthesis")
        weights = data.get("weights")
        return cls(
            campaign=CampaignConfig.from_dict(campaign) if campaign else defaults.campaign,
            synthesis=SynthesisParams.from_dict(synthesis) if synthesis else defaults.synthesis,
            methods=tuple(data.get("methods", [m.value for m in defaults.methods])),
            priority_orders=tuple(tuple(o) for o in data.get("priority_orders", defaults.priority_orders)),
            goal_rules=data.get("goal_rules", defaults.goal_rules),
            seeds=tuple(data.get("seeds", defaults.seeds)),
            acceptability_threshold=float(data.get("acceptability_threshold", defaults.acceptability_threshold)),
            exponential_base=float(data.get("exponential_base", defaults.exponential_base)),
            sample_with_replacement=bool(data.get("sample_with_replacement", defaults.sample_with_replacement)),
            weights=WeightMatrix.from_dict(weights) if weights else defaults.weights,
        )


@dataclass(frozen=True)
class Cell:
    seed: int
    method: Method
    priority: tuple[KpiKind, ...]
    reports: tuple[IntervalReport, ...]

    @property
    def name(self) -> str:
        if self.method is Method.BASELINE:
            return "baseline"
        return f"{self.method.value}_{'-'.join(k.value for k in self.priority)}"

    @property
    def final(self) -> KpiMeasurement:
        return self.reports[-1].measurement


@dataclass(frozen=True)
class CampaignResult:
    seed: int
    baseline: Cell
    goals: tuple[KpiGoal, ...]
    cells: tuple[Cell, ...]

    def pct_change(self, cell: Cell) -> dict[str, float | None]:
        base = _report_values(self.baseline.final)
        values = _report_values(cell.final)
        return {k: percent_change(values[k], base[k]) for k in REPORT_KPIS}


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    campaigns: tuple[CampaignResult, ...]

    def cell(self, seed: int, method: Method, priority: Sequence[KpiKind]) -> Cell:
        for c in self.campaigns:
            if c.seed == seed:
                for cell in c.cells:
                    if cell.method is Method(method) and cell.priority == tuple(priority):
                        return cell
        raise KeyError((seed, method, tuple(priority)))

    def campaign(self, seed: int) -> CampaignResult:
        return next(c for c in self.campaigns if c.seed == seed)

    def to_dict(self) -> dict[str, Any]:
        campaigns = []
        by_cell: dict[str, list[dict[str, float | None]]] = {}
        for c in self.campaigns:
            cells = [
                {
                    "method": Method.BASELINE.value,
                    "priority": None,
                    "final": c.baseline.final.to_dict(),
                    "pct_change": c.pct_change(c.baseline),
                }
            ]
            for cell in c.cells:
                pct = c.pct_change(cell)
                by_cell.setdefault(cell.name, []).append(pct)
                cells.append(
                    {
                        "method": cell.method.value,
                        "priority": [k.value for k in cell.priority],
                        "final": cell.final.to_dict(),
                        "pct_change": pct,
                    }
                )
            campaigns.append(
                {"seed": c.seed, "goals": [g.to_dict() for g in c.goals], "cells": cells}
            )
        mean_rows = []
        for cell in self.campaigns[0].cells:
            rows = by_cell[cell.name]
            mean: dict[str, float | None] = {}
            for k in REPORT_KPIS:
                vals = [r[k] for r in rows if r[k] is not None]
                mean[k] = sum(vals) / len(vals) if vals else None
            mean_rows.append(
                {
                    "method": cell.method.value,
                    "priority": [k.value for k in cell.priority],
                    "campaigns": len(rows),
                    "unweighted_mean_pct_change": mean,
                }
            )
        return {
            "spec": self.spec.to_dict(),
            "notes": {
                "pct_change": "100 * (cell - baseline) / baseline on final cumulative KPIs",
                "smart_threshold_extension": (
                    "smart sequential leaves levers untouched when every raw |phi| <= acceptability_threshold"
                ),
            },
            "campaigns": campaigns,
            "mean": mean_rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def comparison_table(self) -> str:
        """Plain-text table of unweighted-mean percent changes."""
        lines = [f"{'method':<8} {'priority':<30} " + " ".join(f"{k:>12}" for k in REPORT_KPIS)]
        for row in self.to_dict()["mean"]:
            cells = " ".join(
                f"{'n/a':>12}" if v is None else f"{v:>+11.1f}%"
                for v in (row["unweighted_mean_pct_change"][k] for k in REPORT_KPIS)
            )
            lines.append(f"{row['method']:<8} {','.join(row['priority']):<30} {cells}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        (out / "comparison.txt").write_text(self.comparison_table(), encoding="utf-8")
        for c in self.campaigns:
            seed_dir = out / f"seed_{c.seed}"
            seed_dir.mkdir(exist_ok=True)
            for cell in (c.baseline, *c.cells):
                (seed_dir / f"{cell.name}.csv").write_text(
                    reports_to_csv(cell.reports), encoding="utf-8"
                )


def reports_to_csv(reports: Sequence[IntervalReport]) -> str:
    rows = [r.to_row() for r in reports]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def reports_to_json(reports: Sequence[IntervalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def campaign_inventory(spec: ExperimentSpec, seed: int, pool: Inventory | None = None) -> Inventory:
    """Inventory shared by every cell of one seeded campaign."""
    if pool is None:
        params = spec.synthesis
        return generate_inventory(
            SynthesisParams(**{**params.to_dict(), "seed": seed, "count": spec.num_auctions})
        )
    return sample_inventory(pool, spec.num_auctions, seed, replace=spec.sample_with_replacement)


def _run_cell(args: tuple) -> tuple[IntervalReport, ...]:
    inventory, config, selector, weights = args
    return tuple(run_campaign(inventory, config, selector, weights))


def run_experiment(spec: ExperimentSpec, pool: Inventory | None = None, jobs: int = 1) -> ExperimentResult:
    """Baseline first, then every (method, priority order) cell on the same inventory.

    With ``jobs > 1`` cells of a campaign run in worker processes; the result
    does not depend on ``jobs``.
    """
    rule_kinds = list(spec.goal_rules)
    campaigns = []
    for seed in spec.seeds:
        inventory = campaign_inventory(spec, seed, pool)
        base_config = spec.campaign.with_goals(KpiGoal(k, 1.0) for k in rule_kinds)
        base_selector = SelectorConfig(method=Method.BASELINE)
        baseline_reports = _run_cell((inventory, base_config, base_selector, spec.weights))
        baseline = Cell(seed, Method.BASELINE, tuple(rule_kinds), baseline_reports)
        goals = derive_goals(baseline.final, spec.goal_rules)
        config = validate_config(spec.campaign.with_goals(goals))
        grid = [(m, order) for order in spec.priority_orders for m in spec.methods]
        tasks = [
            (
                inventory,
                config,
                SelectorConfig(
                    method=m,
                    acceptability_threshold=spec.acceptability_threshold,
                    exponential_base=spec.exponential_base,
                    priorities=order,
                ),
                spec.weights,
            )
            for m, order in grid
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool_exec:
                results = list(pool_exec.map(_run_cell, tasks))
        else:
            results = [_run_cell(t) for t in tasks]
        cells = tuple(Cell(seed, m, order, reps) for (m, order), reps in zip(grid, results))
        campaigns.append(CampaignResult(seed, baseline, tuple(goals), cells))
    return ExperimentResult(spec, tuple(campaigns))
