"""Multivariate PID feedback control of RTB campaign KPIs.

The package pairs a per-KPI PID controller, KPI selection (Simple/Smart
Sequential, All-At-Once, Baseline) and a clamped multiplicative actuator
with a deterministic second-price replay simulator.
"""

from .actuator import LeverConstraints, apply, clamp_update, propose_update
from .bidder import BidDecision, NoBidReason, compute_bid
from .controller import ControlSignal, ErrorHistory, PidGains, compute_error, pid_signal
from .domain import (
    CampaignConfig,
    ConfigError,
    ImpressionRecord,
    Inventory,
    KpiGoal,
    KpiKind,
    LeverKind,
    LeverState,
    WeightMatrix,
    validate_config,
)
from .selector import Method, Selection, SelectorConfig, adjusted_signal, select, select_simple, select_smart
from .simulator import IntervalReport, KpiMeasurement, measure_kpis, run_campaign, run_interval, settle_auction

__all__ = [
    "BidDecision",
    "CampaignConfig",
    "ConfigError",
    "ControlSignal",
    "ErrorHistory",
    "ImpressionRecord",
    "IntervalReport",
    "Inventory",
    "KpiGoal",
    "KpiKind",
    "KpiMeasurement",
    "LeverConstraints",
    "LeverKind",
    "LeverState",
    "Method",
    "NoBidReason",
    "PidGains",
    "Selection",
    "SelectorConfig",
    "WeightMatrix",
    "adjusted_signal",
    "apply",
    "clamp_update",
    "compute_bid",
    "compute_error",
    "measure_kpis",
    "pid_signal",
    "propose_update",
    "run_campaign",
    "run_interval",
    "select",
    "select_simple",
    "select_smart",
    "settle_auction",
    "validate_config",
]
