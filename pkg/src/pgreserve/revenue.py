"""Expected revenue of auction-only versus guaranteed-plus-auction selling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .auction import AuctionCurves
from .errors import ValidationError
from .pricing import MarketForecast, RiskParams


def rtb_revenue(forecast: MarketForecast, curves: AuctionCurves) -> float:
    """All ``S`` impressions auctioned at competition ``Q / S``."""
    return forecast.S * curves.phi(max(forecast.Q / forecast.S, 0.0))


def residual_competition(forecast: MarketForecast, n: int) -> float | None:
    """Competition level left for the auction after ``n`` guaranteed sales; None if sold out."""
    if n >= forecast.S:
        return None
    return max((forecast.Q - n) / (forecast.S - n), 0.0)


def combined_revenue(
    contracts: Sequence[tuple[float, float]],
    forecast: MarketForecast,
    curves: AuctionCurves,
    risk: RiskParams,
) -> float:
    """Guaranteed income net of expected penalties plus the auction value of the rest."""
    n = len(contracts)
    if n > forecast.S:
        raise ValidationError(f"{n} contracts exceed supply {forecast.S}")
    guaranteed = sum(price for _, price in contracts) * risk.delivery_factor
    xi_star = residual_competition(forecast, n)
    if xi_star is None:
        return guaranteed
    return guaranteed + (forecast.S - n) * curves.phi(xi_star)


@dataclass(frozen=True)
class GuaranteeCheck:
    holds: bool
    reason: str
    min_diff: float | None = None
    at: float | None = None


def guarantee_check(forecast: MarketForecast, curves: AuctionCurves, lam: float) -> GuaranteeCheck:
    """Check whether the risk premium grows with unsold inventory.

    With ``lam > 0`` the mixed strategy dominates when
    ``z(v) = v * psi((Q - S + v) / v)`` is non-decreasing in ``v``. The
    premium actually earned is capped by the winning bid, so ``psi`` is
    replaced by ``min(psi, (pi - phi) / lam)``; the two coincide wherever the
    cap is slack. Checked by forward differences on ``v = 1, 1.5, ..., S``.
    """
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    if lam == 0:
        return GuaranteeCheck(True, "lambda = 0: dominance holds unconditionally")
    grid = np.arange(2, 2 * forecast.S + 1) / 2.0
    z = np.empty(grid.size)
    for i, v in enumerate(grid):
        xi = max((forecast.Q - forecast.S + v) / v, 0.0)
        psi = curves.psi(xi)
        cap = (curves.pi(xi) - curves.phi(xi)) / lam
        z[i] = v * min(psi, cap)
    if not np.all(np.isfinite(z)):
        bad = grid[~np.isfinite(z)][0]
        return GuaranteeCheck(False, f"psi undefined at inventory {bad}", None, float(bad))
    if z.size < 2:
        return GuaranteeCheck(True, "single-impression supply", 0.0, float(grid[0]))
    diffs = np.diff(z) * lam
    i = int(np.argmin(diffs))
    scale = rtb_revenue(forecast, curves) or max(float(np.abs(z).max()) * lam, 1.0)
    ok = bool(diffs[i] >= -1e-9 * scale)
    reason = "risk premium non-decreasing" if ok else f"risk premium decreases after inventory {grid[i]}"
    return GuaranteeCheck(ok, reason, float(diffs[i]), float(grid[i]))


@dataclass(frozen=True)
class RevenueReport:
    r_rtb: float
    r_pg_rtb: float
    uplift: float
    n_accepted: int
    xi_star: float | None
    guarantee_holds: bool
    guarantee_reason: str

    @property
    def dominates(self) -> bool:
        """Mixed revenue at least auction-only revenue, up to 1e-9 relative."""
        return self.r_pg_rtb >= self.r_rtb - 1e-9 * abs(self.r_rtb)


def revenue_report(
    contracts: Sequence[tuple[float, float]],
    forecast: MarketForecast,
    curves: AuctionCurves,
    risk: RiskParams,
    check: GuaranteeCheck | None = None,
) -> RevenueReport:
    r_rtb = rtb_revenue(forecast, curves)
    r_mix = combined_revenue(contracts, forecast, curves, risk)
    if r_rtb != 0:
        uplift = (r_mix - r_rtb) / r_rtb
    else:
        uplift = 0.0 if r_mix == 0 else math.inf
    check = check or guarantee_check(forecast, curves, risk.lam)
    n = len(contracts)
    return RevenueReport(
        r_rtb=r_rtb, r_pg_rtb=r_mix, uplift=uplift, n_accepted=n,
        xi_star=residual_competition(forecast, n),
        guarantee_holds=check.holds, guarantee_reason=check.reason,
    )
