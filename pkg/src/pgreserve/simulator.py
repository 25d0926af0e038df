"""Discrete-event simulation of guaranteed buy requests over the sale horizon."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .auction import AuctionCurves
from .errors import ValidationError
from .pricing import (
    BuyRequest,
    InventoryState,
    MarketForecast,
    RiskParams,
    decide,
    reserve_schedule,
)
from .revenue import GuaranteeCheck, RevenueReport, guarantee_check, revenue_report


@dataclass(frozen=True, eq=False)
class PriceModel:
    """Distribution of the guaranteed price an advertiser proposes."""

    kind: str
    a: float = 0.0
    b: float = 0.0
    sample: np.ndarray | None = None

    @classmethod
    def constant(cls, value: float) -> PriceModel:
        if not (math.isfinite(value) and value >= 0):
            raise ValidationError(f"constant price must be finite and >= 0, got {value}")
        return cls("constant", a=float(value))

    @classmethod
    def uniform(cls, low: float, high: float) -> PriceModel:
        if not 0 <= low <= high:
            raise ValidationError(f"need 0 <= low <= high, got {low}, {high}")
        return cls("uniform", a=float(low), b=float(high))

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> PriceModel:
        if not (math.isfinite(mu) and sigma > 0):
            raise ValidationError(f"invalid log-normal price model mu={mu}, sigma={sigma}")
        return cls("lognormal", a=float(mu), b=float(sigma))

    @classmethod
    def empirical(cls, prices) -> PriceModel:
        arr = np.asarray(prices, dtype=float)
        if arr.size == 0 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValidationError("empirical prices must be a non-empty set of finite values >= 0")
        return cls("empirical", sample=np.sort(arr))

    @classmethod
    def fit_lognormal(cls, prices) -> PriceModel:
        """Log-moment fit to positive observed prices (e.g. winning bids)."""
        arr = np.asarray(prices, dtype=float)
        logs = np.log(arr[arr > 0])
        if logs.size < 2:
            raise ValidationError("need at least two positive prices to fit a log-normal")
        return cls.lognormal(float(logs.mean()), max(float(logs.std(ddof=1)), 1e-9))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, self.a)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size=n)
        if self.kind == "lognormal":
            return rng.lognormal(self.a, self.b, size=n)
        if self.kind == "empirical":
            return rng.choice(self.sample, size=n, replace=True)
        raise ValidationError(f"unknown price model {self.kind!r}")


def gen_requests(rate: float, T: float, price_model: PriceModel, seed: int) -> list[BuyRequest]:
    """Homogeneous Poisson arrivals on ``[0, T]`` with i.i.d. proposed prices."""
    if rate < 0 or not math.isfinite(rate):
        raise ValidationError(f"arrival rate must be finite and >= 0, got {rate}")
    if T <= 0:
        raise ValidationError(f"horizon must be > 0, got {T}")
    rng = np.random.default_rng(seed)
    if rate == 0:
        return []
    times: list[np.ndarray] = []
    t = 0.0
    batch = max(16, int(rate * T * 1.1) + 16)
    while t <= T:
        arr = t + np.cumsum(rng.exponential(1.0 / rate, size=batch))
        times.append(arr)
        t = float(arr[-1])
    arrivals = np.concatenate(times)
    arrivals = arrivals[arrivals <= T]
    prices = price_model.draw(rng, arrivals.size)
    return [BuyRequest(float(a), float(p)) for a, p in zip(arrivals, prices)]


@dataclass(frozen=True)
class SimConfig:
    forecast: MarketForecast
    curves: AuctionCurves
    risk: RiskParams
    price_model: PriceModel
    seed: int = 0
    # None means rate_convention decides: "Q/T" (default) or "Q*T"
    arrival_rate: float | None = None
    rate_convention: str = "Q/T"
    repetitions: int = 1

    def __post_init__(self):
        if self.arrival_rate is not None and self.arrival_rate < 0:
            raise ValidationError("arrival_rate must be >= 0")
        if self.rate_convention not in ("Q/T", "Q*T"):
            raise ValidationError(f"rate_convention must be 'Q/T' or 'Q*T', got {self.rate_convention!r}")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")

    @property
    def rate(self) -> float:
        if self.arrival_rate is not None:
            return self.arrival_rate
        f = self.forecast
        return f.Q / f.T if self.rate_convention == "Q/T" else f.Q * f.T


@dataclass(frozen=True)
class SimEvent:
    t: float
    price: float
    reserve: float
    accepted: bool
    s: int  # remaining after the decision


@dataclass(frozen=True)
class SimTrace:
    events: tuple[SimEvent, ...]
    report: RevenueReport
    seed: int

    @property
    def contracts(self) -> list[tuple[float, float]]:
        return [(e.t, e.price) for e in self.events if e.accepted]


def run_simulation(
    config: SimConfig,
    schedule: Sequence[tuple[int, float]] | None = None,
    check: GuaranteeCheck | None = None,
) -> SimTrace:
    """Feed one Poisson request stream through the decision rule, in time order."""
    f, curves, risk = config.forecast, config.curves, config.risk
    if schedule is None:
        schedule = reserve_schedule(f, curves, risk)
    requests = gen_requests(config.rate, f.T, config.price_model, config.seed)
    state = InventoryState.initial(f)
    events = []
    for req in requests:
        d = decide(state, req, f, curves, risk, schedule=schedule)
        state = d.state
        events.append(SimEvent(req.t, req.price, d.reserve, d.accepted, state.s))
    report = revenue_report(state.accepted, f, curves, risk, check=check)
    return SimTrace(tuple(events), report, config.seed)


def run_seeds(seed: int, n_runs: int) -> list[int]:
    """Independent per-run seeds derived from a base seed."""
    children = np.random.SeedSequence(seed).spawn(n_runs)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


@dataclass(frozen=True)
class BatchSummary:
    n_runs: int
    seeds: list[int]
    reports: list[RevenueReport]
    uplift_mean: float
    uplift_std: float
    accepted_mean: float
    accepted_std: float
    dominance_fraction: float
    traces: list[SimTrace] = field(repr=False)

    def trajectories(self) -> list[list[tuple[float, float]]]:
        """Per run, the reserve in force at each request time."""
        return [[(e.t, e.reserve) for e in tr.events] for tr in self.traces]


def run_batch(config: SimConfig, n_runs: int | None = None) -> BatchSummary:
    """Repeat :func:`run_simulation` with derived seeds and aggregate the reports."""
    n_runs = config.repetitions if n_runs is None else n_runs
    if n_runs < 1:
        raise ValidationError("n_runs must be >= 1")
    schedule = reserve_schedule(config.forecast, config.curves, config.risk)
    check = guarantee_check(config.forecast, config.curves, config.risk.lam)
    seeds = run_seeds(config.seed, n_runs)
    traces = [run_simulation(replace(config, seed=s), schedule, check) for s in seeds]
    reports = [t.report for t in traces]
    uplift = np.array([r.uplift for r in reports])
    acc = np.array([r.n_accepted for r in reports], dtype=float)
    return BatchSummary(
        n_runs=n_runs, seeds=seeds, reports=reports,
        uplift_mean=float(uplift.mean()), uplift_std=float(uplift.std()),
        accepted_mean=float(acc.mean()), accepted_std=float(acc.std()),
        dominance_fraction=float(np.mean([r.dominates for r in reports])),
        traces=traces,
    )
