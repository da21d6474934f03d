"""Bid function: linear in predicted CTR, gated by the tolerance and viewability levers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .domain import CampaignConfig, ImpressionRecord, Inventory, LeverState

CPM = 1000.0


class NoBidReason(IntEnum):
    # Zero is reserved for "bid" in the vectorized decision codes.
    BUDGET_EXHAUSTED = 1
    BELOW_TOLERANCE = 2
    NO_VIEW_PROBABILITY = 3
    BELOW_VIEW_THRESHOLD = 4


BID = 0


@dataclass(frozen=True)
class BidDecision:
    price: float | None = None
    reason: NoBidReason | None = None

    @classmethod
    def bid(cls, price: float) -> BidDecision:
        return cls(price=price)

    @classmethod
    def no_bid(cls, reason: NoBidReason) -> BidDecision:
        return cls(reason=reason)

    @property
    def is_bid(self) -> bool:
        return self.price is not None

    @property
    def code(self) -> int:
        return BID if self.reason is None else int(self.reason)


def bid_price(predicted_ctr: float, levers: LeverState, config: CampaignConfig) -> float:
    """Expected impression value in CPM, scaled by the multiplier and capped."""
    raw = levers.bid_multiplier * config.value_per_click * predicted_ctr * CPM
    return min(max(raw, config.min_bid), config.max_bid)


def compute_bid(
    imp: ImpressionRecord,
    levers: LeverState,
    config: CampaignConfig,
    remaining_budget: float,
) -> BidDecision:
    # The clearing price is unknown before the auction, so any positive
    # remainder is enough to bid; the last win may overshoot the budget.
    if not remaining_budget > 0:
        return BidDecision.no_bid(NoBidReason.BUDGET_EXHAUSTED)
    if imp.predicted_ctr < levers.tolerance:
        return BidDecision.no_bid(NoBidReason.BELOW_TOLERANCE)
    if levers.viewability_threshold > 0:
        if imp.predicted_view_prob is None:
            return BidDecision.no_bid(NoBidReason.NO_VIEW_PROBABILITY)
        if imp.predicted_view_prob < levers.viewability_threshold:
            return BidDecision.no_bid(NoBidReason.BELOW_VIEW_THRESHOLD)
    return BidDecision.bid(bid_price(imp.predicted_ctr, levers, config))


def compute_bids(
    inventory: Inventory, levers: LeverState, config: CampaignConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`compute_bid` with an unlimited budget.

    Returns ``(codes, prices)``: ``codes`` is 0 for a bid or a
    :class:`NoBidReason` value, ``prices`` is NaN where there is no bid.
    """
    ctr = inventory.predicted_ctr
    vp = inventory.predicted_view_prob
    n = len(inventory)
    codes = np.zeros(n, dtype=np.int8)
    if levers.viewability_threshold > 0:
        absent = np.isnan(vp)
        with np.errstate(invalid="ignore"):
            codes[~absent & (vp < levers.viewability_threshold)] = NoBidReason.BELOW_VIEW_THRESHOLD
        codes[absent] = NoBidReason.NO_VIEW_PROBABILITY
    # Tolerance is checked first in compute_bid, so it wins over the view reasons.
    codes[ctr < levers.tolerance] = NoBidReason.BELOW_TOLERANCE
    raw = levers.bid_multiplier * config.value_per_click * ctr * CPM
    prices = np.minimum(np.maximum(raw, config.min_bid), config.max_bid)
    prices = np.where(codes == BID, prices, np.nan)
    return codes, prices
