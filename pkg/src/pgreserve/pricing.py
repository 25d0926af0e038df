"""Hidden reserve prices for guaranteed impressions and the accept/reject rule.

The publisher holds ``s`` unsold future impressions. Selling one more in
advance is worth it when the offered price covers the marginal loss of
terminal (auction) value, inflated by the expected non-delivery penalty:

    r(s) = (V(s) - V(s - 1)) / (1 - gamma * omega)

The value function does not depend on time, so ``V`` is the terminal value
and reserves depend on the remaining inventory only. :func:`bellman_value`
runs the full backward recursion and exists to check that claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .auction import AuctionCurves
from .errors import ValidationError


@dataclass(frozen=True)
class MarketForecast:
    """Expected delivery-period supply ``S`` (impressions) and demand ``Q`` (bids).

    Guaranteed contracts are sold over ``[0, T]``; impressions are delivered
    over ``[T, T_end]``.
    """

    S: int
    Q: float
    T: float = 1.0
    T_end: float = 2.0

    def __post_init__(self):
        if isinstance(self.S, bool) or int(self.S) != self.S or self.S <= 0:
            raise ValidationError(f"supply S must be a positive integer, got {self.S}")
        object.__setattr__(self, "S", int(self.S))
        if not (math.isfinite(self.Q) and self.Q >= 0):
            raise ValidationError(f"demand Q must be finite and >= 0, got {self.Q}")
        if not (0 < self.T < self.T_end):
            raise ValidationError(f"need 0 < T < T_end, got T={self.T}, T_end={self.T_end}")


@dataclass(frozen=True)
class RiskParams:
    gamma: float = 0.0  # penalty multiple of the guaranteed price
    omega: float = 0.0  # probability of failing to deliver
    lam: float = 0.0  # risk aversion

    def __post_init__(self):
        if self.gamma < 0 or not 0 <= self.omega <= 1 or self.lam < 0:
            raise ValidationError(f"invalid risk parameters {self}")
        if self.gamma * self.omega >= 1:
            raise ValidationError(f"gamma * omega must be < 1, got {self.gamma * self.omega}")

    @property
    def delivery_factor(self) -> float:
        """Expected fraction of a guaranteed price kept after penalties, ``1 - gamma*omega``."""
        return 1.0 - self.gamma * self.omega


def competition_level(forecast: MarketForecast, s: int) -> float:
    """Per-impression demand once ``S - s`` impressions and bids left for guaranteed sales.

    Clamped at 0 when the forecast demand cannot even cover the pre-sold units.
    """
    if not 1 <= s <= forecast.S:
        raise ValidationError(f"remaining inventory must lie in [1, {forecast.S}], got {s}")
    return max((forecast.Q - forecast.S) / s + 1.0, 0.0)


def terminal_value(
    s: int, forecast: MarketForecast, curves: AuctionCurves, risk: RiskParams
) -> float:
    """Risk-adjusted auction value of ``s`` impressions at delivery.

    Each impression is worth the expected payment plus ``lam`` payment
    standard deviations, capped at the expected winning bid.
    """
    if not 0 <= s <= forecast.S:
        raise ValidationError(f"inventory must lie in [0, {forecast.S}], got {s}")
    if s == 0:
        return 0.0
    xi = competition_level(forecast, s)
    adjusted = curves.phi(xi) + risk.lam * curves.psi(xi)
    pi = curves.pi(xi)
    value = s * adjusted if pi >= adjusted else s * pi
    if not math.isfinite(value):
        raise ValidationError(f"auction curves undefined at xi={xi}")
    return value


def reserve_price(
    s: int, forecast: MarketForecast, curves: AuctionCurves, risk: RiskParams
) -> float:
    """Lowest acceptable guaranteed price with ``s`` impressions left.

    Negative values are returned as is (a terminal value falling in ``s``);
    they mean any non-negative offer is accepted.
    """
    if s < 1:
        raise ValidationError("reserve price needs at least one remaining impression")
    dv = terminal_value(s, forecast, curves, risk) - terminal_value(s - 1, forecast, curves, risk)
    return dv / risk.delivery_factor


def reserve_schedule(
    forecast: MarketForecast, curves: AuctionCurves, risk: RiskParams
) -> list[tuple[int, float]]:
    """``[(s, r(s)) for s = 1..S]``, bit-identical to per-call :func:`reserve_price`."""
    values = [terminal_value(s, forecast, curves, risk) for s in range(forecast.S + 1)]
    return [(s, (values[s] - values[s - 1]) / risk.delivery_factor) for s in range(1, forecast.S + 1)]


@dataclass(frozen=True)
class BuyRequest:
    t: float
    price: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and math.isfinite(self.price)):
            raise ValidationError(f"buy request must be finite, got {self}")
        if self.price < 0:
            raise ValidationError(f"guaranteed price must be >= 0, got {self.price}")


@dataclass(frozen=True)
class InventoryState:
    """Remaining impressions ``s`` and the ``(time, price)`` contracts sold so far."""

    S: int
    s: int
    accepted: tuple[tuple[float, float], ...] = ()
    t: float = 0.0

    def __post_init__(self):
        if self.s < 0 or self.s + len(self.accepted) != self.S:
            raise ValidationError(
                f"inventory not conserved: s={self.s} + sold={len(self.accepted)} != S={self.S}"
            )

    @classmethod
    def initial(cls, forecast: MarketForecast) -> InventoryState:
        return cls(S=forecast.S, s=forecast.S)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reserve: float
    state: InventoryState


def decide(
    state: InventoryState,
    request: BuyRequest,
    forecast: MarketForecast,
    curves: AuctionCurves,
    risk: RiskParams,
    schedule: Sequence[tuple[int, float]] | None = None,
) -> Decision:
    """Accept the request iff its price meets the current reserve (ties accept).

    ``schedule`` (from :func:`reserve_schedule`) replaces per-call evaluation;
    both give the same reserve. A sold-out inventory rejects with an
    infinite reserve.
    """
    if request.t < state.t:
        raise ValidationError(f"request at t={request.t} precedes current time {state.t}")
    if request.t > forecast.T:
        raise ValidationError(f"request at t={request.t} is after the sale horizon {forecast.T}")
    if state.s == 0:
        return Decision(False, math.inf, replace(state, t=request.t))
    if schedule is not None:
        reserve = schedule[state.s - 1][1]
    else:
        reserve = reserve_price(state.s, forecast, curves, risk)
    if request.price >= reserve:
        new = InventoryState(
            S=state.S, s=state.s - 1,
            accepted=state.accepted + ((request.t, request.price),), t=request.t,
        )
        return Decision(True, reserve, new)
    return Decision(False, reserve, replace(state, t=request.t))


def bellman_value(
    steps: int,
    s: int,
    accept_prob: Callable[[float, int], float],
    forecast: MarketForecast,
    curves: AuctionCurves,
    risk: RiskParams,
) -> float:
    """``V(0, s)`` from the backward recursion over ``steps`` periods of ``[0, T]``.

    Each period sells one impression at the reserve with probability
    ``accept_prob(t, s)``. Verification only: the result equals
    :func:`terminal_value` for any acceptance law.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    factor = risk.delivery_factor
    V = np.array([terminal_value(j, forecast, curves, risk) for j in range(s + 1)])
    dt = forecast.T / steps
    for k in range(steps - 1, -1, -1):
        t = k * dt
        nxt = V.copy()
        for j in range(1, s + 1):
            r = (V[j] - V[j - 1]) / factor
            p = accept_prob(t, j)
            nxt[j] = p * (r * factor + V[j - 1]) + (1.0 - p) * V[j]
        V = nxt
    return float(V[s])
