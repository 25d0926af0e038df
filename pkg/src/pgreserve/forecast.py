"""Next-day supply and demand forecasts from hourly aggregates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curvefit import SurfaceModel, fit_lqr, fit_pnr, l2_eval, predict
from .errors import NumericalError, ValidationError
from .ingest import HourlyAggregate

HOURS = np.arange(24)


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "pnr"
    p: int = 1
    q: int = 5
    bandwidth: float = 0.3

    def __post_init__(self):
        if self.kind not in ("pnr", "lqr"):
            raise ValidationError(f"forecast model must be 'pnr' or 'lqr', got {self.kind!r}")

    @property
    def name(self) -> str:
        return f"PNR({self.p},{self.q})" if self.kind == "pnr" else "LQR"


def fit_surface(data, spec: ModelSpec) -> SurfaceModel:
    if spec.kind == "pnr":
        return fit_pnr(data, spec.p, spec.q)
    return fit_lqr(data, spec.bandwidth)


def surface_data(aggregates: Sequence[HourlyAggregate], days, target: str) -> np.ndarray:
    """Rows of (day, hour, value) for ``target`` in {"supply", "demand"} over ``days``."""
    days = set(int(d) for d in days)
    rows = [(a.day, a.hour, getattr(a, target)) for a in aggregates if a.day in days]
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _training_days(delivery_day: int, training_days: int) -> range:
    days = range(max(0, delivery_day - training_days), delivery_day)
    if len(days) < 2:
        raise ValidationError(f"need >= 2 training days before day {delivery_day}")
    return days


def _fit(aggregates, days, target, spec) -> SurfaceModel:
    data = surface_data(aggregates, days, target)
    try:
        return fit_surface(data, spec)
    except NumericalError as exc:
        raise type(exc)(f"{spec.name} on {target}: {exc}") from exc


@dataclass(frozen=True)
class ForecastResult:
    S: int
    Q: float
    supply: np.ndarray  # predicted per hour of the delivery day
    demand: np.ndarray
    model: str
    delivery_day: int


def forecast_day(
    aggregates: Sequence[HourlyAggregate],
    delivery_day: int,
    spec: ModelSpec = ModelSpec(),
    training_days: int = 7,
) -> ForecastResult:
    """Fit supply and demand separately and sum the floored hourly predictions."""
    days = _training_days(delivery_day, training_days)
    sup = predict(_fit(aggregates, days, "supply", spec), delivery_day, HOURS, floor=True)
    dem = predict(_fit(aggregates, days, "demand", spec), delivery_day, HOURS, floor=True)
    return ForecastResult(
        S=int(round(float(sup.sum()))), Q=float(dem.sum()),
        supply=sup, demand=dem, model=spec.name, delivery_day=delivery_day,
    )


@dataclass(frozen=True)
class GridRow:
    model: str
    demand_avg: float
    demand_std: float
    supply_avg: float
    supply_std: float


def grid_specs(bandwidth: float = 0.3) -> list[ModelSpec]:
    """PNR(5,5), PNR(4,5), ..., PNR(1,1), then LQR."""
    specs = [ModelSpec("pnr", p, q) for q in range(5, 0, -1) for p in range(5, 0, -1)]
    return specs + [ModelSpec("lqr", bandwidth=bandwidth)]


def backtest(
    aggregates: Sequence[HourlyAggregate],
    spec: ModelSpec,
    target: str,
    target_days: Sequence[int],
    training_days: int = 7,
) -> tuple[float, float]:
    """Mean and std over ``target_days`` of the one-day-ahead relative L2 error."""
    errs = []
    for d in target_days:
        model = _fit(aggregates, _training_days(d, training_days), target, spec)
        holdout = surface_data(aggregates, [d], target)
        score = l2_eval(model, holdout, floor=True)
        if score.n_days:
            errs.append(score.avg)
    errs = np.asarray(errs)
    return float(errs.mean()), float(errs.std())


def model_grid(
    aggregates: Sequence[HourlyAggregate],
    delivery_day: int,
    training_days: int = 7,
    backtest_days: int = 3,
    bandwidth: float = 0.3,
) -> list[GridRow]:
    """Evaluate every PNR(p, q) and LQR by rolling one-day-ahead forecasts.

    The target days are the ``backtest_days`` days just before the delivery
    day, each predicted from its own preceding ``training_days`` window; the
    delivery day itself is never used.
    """
    first = delivery_day - backtest_days
    if backtest_days < 1 or first - training_days < 0:
        raise ValidationError(
            f"backtest of {backtest_days} days with {training_days}-day windows "
            f"needs delivery_day >= {backtest_days + training_days}"
        )
    targets = list(range(first, delivery_day))
    rows = []
    for spec in grid_specs(bandwidth):
        d = backtest(aggregates, spec, "demand", targets, training_days)
        s = backtest(aggregates, spec, "supply", targets, training_days)
        rows.append(GridRow(spec.name, *d, *s))
    return rows
