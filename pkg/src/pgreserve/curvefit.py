"""Surface regression for supply/demand forecasts and robust smoothing of the
empirical auction curves.

Two families model a quantity over (day, hour):

* PNR(p, q) -- least squares over the tensor monomial basis
  ``day**i * hour**j`` (``i <= p``, ``j <= q``) with both inputs affinely
  mapped to [-1, 1] using the training range.
* LQR -- local quadratic regression with tricube weights over the nearest
  ``ceil(bandwidth * N)`` training points, distances taken after mapping day
  and hour each to [0, 1].

The auction curves are smoothed with robust locally weighted regression
(Cleveland's lowess with bisquare robustness iterations).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import polynomial as P

from .auction import AuctionCurves
from .errors import DataError, RankDeficientError, ValidationError

log = logging.getLogger(__name__)


def _tricube(u: np.ndarray) -> np.ndarray:
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 3) ** 3


def _bisquare(u: np.ndarray) -> np.ndarray:
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 2) ** 2


def _as_triples(data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError("surface data must be rows of (day, hour, value)")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("surface data must be finite")
    return arr[:, 0], arr[:, 1], arr[:, 2]


# --------------------------------------------------------------------------
# Surface models
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurfaceModel:
    """A fitted PNR or LQR surface.

    ``day_range``/``hour_range`` are the training extents used to normalise
    inputs. PNR keeps its coefficients (row ``i``, column ``j`` multiplies
    ``day**i * hour**j``); LQR keeps the normalised training points.
    """

    kind: str
    day_range: tuple[float, float]
    hour_range: tuple[float, float]
    p: int = 0
    q: int = 0
    coef: np.ndarray | None = None
    bandwidth: float = 0.0
    points: np.ndarray | None = None
    values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"PNR({self.p},{self.q})" if self.kind == "pnr" else "LQR"


def _unit(x, rng: tuple[float, float]) -> np.ndarray:
    lo, hi = rng
    span = hi - lo
    return (np.asarray(x, dtype=float) - lo) / span if span > 0 else np.zeros_like(x, dtype=float)


def fit_pnr(data, p: int, q: int) -> SurfaceModel:
    """Least-squares PNR(p, q) surface over (day, hour)."""
    if not (1 <= p <= 5 and 1 <= q <= 5):
        raise ValidationError(f"PNR degrees must lie in [1, 5], got ({p}, {q})")
    day, hour, z = _as_triples(data)
    ncoef = (p + 1) * (q + 1)
    if z.size < ncoef:
        raise ValidationError(f"PNR({p},{q}) needs >= {ncoef} points, got {z.size}")
    day_range = (float(day.min()), float(day.max()))
    hour_range = (float(hour.min()), float(hour.max()))
    x = 2.0 * _unit(day, day_range) - 1.0
    y = 2.0 * _unit(hour, hour_range) - 1.0
    A = P.polyvander2d(x, y, [p, q])
    coef, _, rank, _ = np.linalg.lstsq(A, z, rcond=None)
    if rank < ncoef:
        raise RankDeficientError(
            f"PNR({p},{q}) design has rank {rank} < {ncoef}; "
            f"{np.unique(day).size} distinct days, {np.unique(hour).size} distinct hours"
        )
    grad = A.T @ (A @ coef - z)
    denom = np.linalg.norm(A) * max(np.linalg.norm(z), 1e-300)
    return SurfaceModel(
        kind="pnr", p=p, q=q,
        coef=coef.reshape(p + 1, q + 1),
        day_range=day_range, hour_range=hour_range,
        diagnostics={"optimality_residual": float(np.linalg.norm(grad) / denom)},
    )


def fit_lqr(data, bandwidth: float = 0.3) -> SurfaceModel:
    """Local quadratic (loess-style) surface; prediction happens lazily per query."""
    if not (0.0 < bandwidth <= 1.0):
        raise ValidationError(f"LQR bandwidth must lie in (0, 1], got {bandwidth}")
    day, hour, z = _as_triples(data)
    if z.size < 6:
        raise ValidationError("LQR needs at least 6 points")
    day_range = (float(day.min()), float(day.max()))
    hour_range = (float(hour.min()), float(hour.max()))
    pts = np.column_stack([_unit(day, day_range), _unit(hour, hour_range)])
    model = SurfaceModel(
        kind="lqr", bandwidth=float(bandwidth), day_range=day_range, hour_range=hour_range,
        points=pts, values=z.copy(),
    )
    fallbacks = sum(not _lqr_at(model, qx, qy)[1] for qx, qy in pts)
    model.diagnostics["fallback_points"] = int(fallbacks)
    if fallbacks:
        log.warning("LQR fell back to a weighted mean at %d of %d training points", fallbacks, z.size)
    return model


def _lqr_at(model: SurfaceModel, qx: float, qy: float) -> tuple[float, bool]:
    """Local quadratic value at a normalised query; ``ok`` is False on fallback."""
    pts, z = model.points, model.values
    n = z.size
    k = min(n, max(6, math.ceil(model.bandwidth * n)))
    dx = pts[:, 0] - qx
    dy = pts[:, 1] - qy
    d = np.hypot(dx, dy)
    idx = np.argsort(d, kind="stable")[:k]
    h = d[idx[-1]]
    if h <= 0.0:
        return float(z[idx].mean()), False
    # tiny inflation keeps the k-th neighbour in the fit
    w = _tricube(d[idx] / (h * (1.0 + 1e-9)))
    ex, ey = dx[idx], dy[idx]
    A = np.column_stack([np.ones(k), ex, ey, ex * ex, ex * ey, ey * ey])
    sw = np.sqrt(w)
    coef, _, rank, sv = np.linalg.lstsq(A * sw[:, None], z[idx] * sw, rcond=None)
    if rank < 6 or np.count_nonzero(w) < 6:
        wsum = w.sum()
        mean = float(w @ z[idx] / wsum) if wsum > 0 else float(z[idx].mean())
        return mean, False
    return float(coef[0]), True


def predict(model: SurfaceModel, day, hour, floor: bool = False):
    """Evaluate a surface. ``floor`` clips negatives to 0 (supply/demand targets)."""
    d = np.asarray(day, dtype=float)
    h = np.asarray(hour, dtype=float)
    d, h = np.broadcast_arrays(d, h)
    if model.kind == "pnr":
        x = 2.0 * _unit(d, model.day_range) - 1.0
        y = 2.0 * _unit(h, model.hour_range) - 1.0
        out = P.polyval2d(x, y, model.coef)
    else:
        qx = _unit(d, model.day_range).ravel()
        qy = _unit(h, model.hour_range).ravel()
        out = np.array([_lqr_at(model, a, b)[0] for a, b in zip(qx, qy)]).reshape(d.shape)
    out = np.asarray(out, dtype=float)
    if floor:
        out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class L2Score:
    avg: float
    std: float
    n_days: int
    skipped_days: tuple = ()

    def __iter__(self):
        return iter((self.avg, self.std))


def l2_eval(model: SurfaceModel, holdout, floor: bool = False) -> L2Score:
    """Per-day relative L2 error ``||pred - actual|| / ||actual||``, averaged over days.

    Days whose actual values are all zero have no relative error and are skipped.
    """
    day, hour, z = _as_triples(holdout)
    if z.size == 0:
        raise ValidationError("holdout is empty")
    pred = np.atleast_1d(predict(model, day, hour, floor=floor))
    errs, skipped = [], []
    for d in np.unique(day):
        m = day == d
        norm = np.linalg.norm(z[m])
        if norm == 0.0:
            skipped.append(float(d))
            continue
        errs.append(np.linalg.norm(pred[m] - z[m]) / norm)
    if not errs:
        raise DataError("every holdout day has all-zero actuals")
    if skipped:
        log.info("l2_eval skipped all-zero days %s", skipped)
    errs = np.asarray(errs)
    return L2Score(float(errs.mean()), float(errs.std()), len(errs), tuple(skipped))


# --------------------------------------------------------------------------
# Robust locally weighted regression
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FittedCurve:
    """Piecewise-linear curve through knots, clamped to the end values outside."""

    xi: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if xi.ndim != 1 or xi.shape != y.shape or xi.size == 0:
            raise ValidationError("knots must be two equal-length non-empty 1-d arrays")
        if np.any(np.diff(xi) <= 0):
            raise ValidationError("knots must be strictly increasing")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "y", y)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.xi[0]), float(self.xi[-1])

    def __call__(self, x):
        out = np.interp(x, self.xi, self.y)
        return float(out) if np.ndim(out) == 0 else out


def _local_poly(x, y, w, x0, degree):
    """Weighted polynomial fit centred at ``x0``; None if under-determined."""
    keep = w > 0
    if np.unique(x[keep]).size < degree + 1:
        return None
    A = np.vander(x[keep] - x0, degree + 1, increasing=True)
    sw = np.sqrt(w[keep])
    coef, _, rank, _ = np.linalg.lstsq(A * sw[:, None], y[keep] * sw, rcond=None)
    if rank < degree + 1:
        return None
    return float(coef[0])


def fit_rlwr(
    points,
    fraction: float = 0.5,
    robustness_iters: int = 2,
    degree: int = 1,
    nonnegative: bool = True,
    min_scale: float = 0.0,
) -> FittedCurve:
    """Robust locally weighted regression sampled at the sorted unique x values.

    Each local fit uses tricube weights over the nearest ``ceil(fraction * N)``
    points, widened when it holds too few distinct x. Robustness iterations
    multiply in bisquare weights of residuals scaled by six median absolute
    residuals, or ``min_scale`` if larger (the known noise level of the
    targets, so that smoothing bias on nearly noiseless points is not mistaken
    for outliers). ``nonnegative`` floors the result at zero.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("points must be rows of (x, y)")
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    if robustness_iters < 0 or degree < 0:
        raise ValidationError("robustness_iters and degree must be >= 0")
    n = arr.shape[0]
    if n < 5:
        raise ValidationError(f"RLWR needs >= 5 points, got {n}")
    order = np.argsort(arr[:, 0], kind="stable")
    x, y = arr[order, 0], arr[order, 1]
    knots, inverse = np.unique(x, return_inverse=True)
    if knots.size < 2:
        raise ValidationError("RLWR needs at least two distinct x values")
    degree = min(degree, knots.size - 1)
    k0 = max(math.ceil(fraction * n), degree + 1)

    robust = np.ones(n)
    fit = np.full(knots.size, np.nan)
    for it in range(robustness_iters + 1):
        prev = fit.copy()
        for i, x0 in enumerate(knots):
            d = np.abs(x - x0)
            ds = np.sort(d)
            value = None
            for k in range(min(k0, n), n + 1):
                h = ds[k] if k < n else ds[-1] * (1.0 + 1e-9) + 1e-300
                if h <= 0.0:
                    continue
                w = _tricube(d / h) * robust
                if not np.any(w > 0):
                    break
                value = _local_poly(x, y, w, x0, degree)
                if value is not None:
                    break
            if value is None:
                if it > 0:
                    value = prev[i]
                else:
                    # not even the full sample is usable; fall back to a mean
                    w = _tricube(d / (ds[-1] * (1.0 + 1e-9) + 1e-300))
                    value = float(w @ y / w.sum()) if w.sum() > 0 else float(y.mean())
            fit[i] = value
        if it == robustness_iters:
            break
        resid = y - fit[inverse]
        s = max(float(np.median(np.abs(resid))), min_scale)
        if s > 0:
            robust = _bisquare(resid / (6.0 * s))
        else:
            robust = (np.abs(resid) <= 1e-12 * max(np.abs(y).max(), 1.0)).astype(float)
    if nonnegative:
        fit = np.maximum(fit, 0.0)
    return FittedCurve(knots, fit)


def resample(points, rate=Fraction(3, 2), seed: int = 0) -> np.ndarray:
    """Bootstrap rows with replacement; the output has ``ceil(rate * N)`` rows."""
    arr = np.asarray(points)
    rate = Fraction(rate).limit_denominator(10 ** 6) if not isinstance(rate, Fraction) else rate
    if rate <= 0:
        raise ValidationError(f"resampling rate must be > 0, got {rate}")
    n = arr.shape[0]
    size = math.ceil(rate * n)
    if n == 0:
        return arr[:0]
    idx = np.random.default_rng(seed).integers(0, n, size=size)
    return arr[idx]


# --------------------------------------------------------------------------
# Auction curves from logs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BinnedAuctions:
    """Per competition level: auction count and payment/winning-bid moments."""

    xi: np.ndarray
    count: np.ndarray
    mean_payment: np.ndarray
    std_payment: np.ndarray
    mean_winning_bid: np.ndarray
    std_winning_bid: np.ndarray


def bin_auctions(records) -> BinnedAuctions:
    """Group ``(bid_count, payment, winning_bid)`` rows by bid count."""
    arr = np.asarray(records, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise DataError("auction records must be a non-empty (N, 3) array")
    xi, inv, counts = np.unique(arr[:, 0], return_inverse=True, return_counts=True)
    mean_pay = np.bincount(inv, arr[:, 1]) / counts
    sq = np.bincount(inv, (arr[:, 1] - mean_pay[inv]) ** 2) / counts
    mean_win = np.bincount(inv, arr[:, 2]) / counts
    sq_win = np.bincount(inv, (arr[:, 2] - mean_win[inv]) ** 2) / counts
    return BinnedAuctions(xi, counts, mean_pay, np.sqrt(sq), mean_win, np.sqrt(sq_win))


def build_auction_curves(
    records,
    fraction: float = 0.5,
    robustness_iters: int = 2,
    resample_rate=None,
    seed: int = 0,
    degree: int = 2,
) -> AuctionCurves:
    """Fit phi, psi and pi from per-auction ``(bid_count, payment, winning_bid)`` rows.

    Records are optionally bootstrapped at ``resample_rate``, binned by bid
    count, and each bin statistic is smoothed with :func:`fit_rlwr`. Smoothing
    is locally quadratic by default since a local line over a handful of bins
    is visibly biased where the curves bend at low competition. Payment
    statistics are smoothed over bins with at least two bidders only; with
    fewer than 5 such bins the bin statistics are used as knots unsmoothed.
    The robustness scale is floored at the median standard error of the bin
    statistic. Logs where no auction had a second bidder give phi = psi = 0
    and a constant pi.
    """
    arr = np.asarray(records, dtype=float)
    if resample_rate is not None:
        arr = resample(arr, resample_rate, seed)
    bins = bin_auctions(arr)
    if bins.xi.max() <= 1:
        win = float(np.average(bins.mean_winning_bid, weights=bins.count))
        zero = FittedCurve([1.0], [0.0])
        return AuctionCurves(phi=zero, psi=zero, pi=FittedCurve([1.0], [max(win, 0.0)]))
    if bins.xi.size < 3:
        raise DataError(f"need >= 3 distinct competition levels, got {bins.xi.size}")

    def smooth(stat: np.ndarray, se: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = np.maximum(stat, 0.0)
        if np.count_nonzero(mask) >= 5:
            pts = np.column_stack([bins.xi[mask], stat[mask]])
            noise = float(np.median(se[mask]))
            out[mask] = fit_rlwr(pts, fraction, robustness_iters, degree, min_scale=noise).y
        return out

    root_n = np.sqrt(bins.count)
    # Payment jumps from 0 to a positive value between one and two bidders;
    # smoothing across that jump would bias the low-competition end.
    contested = bins.xi > 1
    everywhere = np.ones_like(contested)
    phi = smooth(bins.mean_payment, bins.std_payment / root_n, contested)
    # normal-theory standard error of a sample standard deviation
    psi = smooth(bins.std_payment, bins.std_payment / np.sqrt(2.0) / root_n, contested)
    pi = np.maximum(smooth(bins.mean_winning_bid, bins.std_winning_bid / root_n, everywhere), phi)
    return AuctionCurves(
        phi=FittedCurve(bins.xi, phi),
        psi=FittedCurve(bins.xi, psi),
        pi=FittedCurve(bins.xi, pi),
    )


def tabulate_curves(curves: AuctionCurves, xi_grid) -> AuctionCurves:
    """Sample any curves on a grid and return interpolating FittedCurves.

    Linear interpolation keeps ``pi >= phi`` wherever it holds at the knots.
    """
    grid = np.unique(np.asarray(xi_grid, dtype=float))
    phi = np.array([curves.phi(g) for g in grid])
    psi = np.array([curves.psi(g) for g in grid])
    pi = np.maximum(np.array([curves.pi(g) for g in grid]), phi)
    return AuctionCurves(FittedCurve(grid, phi), FittedCurve(grid, psi), FittedCurve(grid, pi))
