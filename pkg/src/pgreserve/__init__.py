"""Risk-aware dynamic reserve prices for selling guaranteed ad impressions."""

__version__ = "0.1.0"

from .auction import (
    AuctionCurves,
    BidDistribution,
    expected_second_price,
    expected_winning_bid,
    monte_carlo_auction,
    payment_std,
)
from .pricing import (
    BuyRequest,
    Decision,
    InventoryState,
    MarketForecast,
    RiskParams,
    bellman_value,
    competition_level,
    decide,
    reserve_price,
    reserve_schedule,
    terminal_value,
)
from .revenue import combined_revenue, guarantee_check, rtb_revenue
from .simulator import PriceModel, SimConfig, run_batch, run_simulation

__all__ = [
    "AuctionCurves", "BidDistribution", "expected_second_price", "expected_winning_bid",
    "monte_carlo_auction", "payment_std",
    "BuyRequest", "Decision", "InventoryState", "MarketForecast", "RiskParams", "bellman_value",
    "competition_level", "decide", "reserve_price", "reserve_schedule", "terminal_value",
    "combined_revenue", "guarantee_check", "rtb_revenue",
    "PriceModel", "SimConfig", "run_batch", "run_simulation",
]
