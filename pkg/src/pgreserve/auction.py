"""Order statistics of second-price auctions.

For ``xi`` i.i.d. bids with density ``g`` and cdf ``F`` the auction payment is
the second highest bid, with density

    xi (xi - 1) g(x) (1 - F(x)) F(x)**(xi - 2)

and the winning bid is the highest, with density ``xi g(x) F(x)**(xi - 1)``.
Both formulas are evaluated at real-valued ``xi`` (the competition level is
an average bidder count, not an integer).

Money is per impression throughout (CPM / 1000).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache, partial
from statistics import NormalDist
from typing import Callable, Iterator

import numpy as np
from scipy import integrate, special

from .errors import QuadratureError, ValidationError

EPS_ABS = 1e-8
EPS_REL = 1e-10
# log-normal integrals run over z = (log x - mu) / sigma in [-Z_FLOOR, Z_TOP];
# the mass outside is below 1e-23 (top) and 1e-349 (bottom)
Z_TOP = 10.0
Z_FLOOR = 40.0
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Quantile offsets (in units of 1/xi from the top) used as quadrature
# breakpoints; the order-statistic densities concentrate near F = 1 - c/xi.
_BREAK_OFFSETS = (0.1, 0.5, 1.0, 2.0, 4.0, 16.0)
_LOWER_TAIL_QUANTILES = (1e-2, 1e-4, 1e-6, 1e-8)
# For xi < 2, mass below these quantiles is integrated in w = F**(xi - 1).
_SPLIT_QUANTILE = 1e-3
_W_BREAK_QUANTILES = (1e-300, 1e-200, 1e-100, 1e-50, 1e-30, 1e-20, 1e-12, 1e-8, 1e-5)


@dataclass(frozen=True, eq=False)
class BidDistribution:
    """Bid model for one auction participant.

    Build with :meth:`uniform`, :meth:`lognormal` or :meth:`empirical` rather
    than the raw constructor.
    """

    kind: str
    v: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0
    sample: np.ndarray | None = None

    @classmethod
    def uniform(cls, v: float) -> BidDistribution:
        v = float(v)
        if not (math.isfinite(v) and v > 0):
            raise ValidationError(f"uniform upper support must be > 0, got {v}")
        return cls("uniform", v=v)

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> BidDistribution:
        mu, sigma = float(mu), float(sigma)
        if not math.isfinite(mu):
            raise ValidationError(f"log-normal mu must be finite, got {mu}")
        if not (math.isfinite(sigma) and sigma > 0):
            raise ValidationError(f"log-normal sigma must be > 0, got {sigma}")
        return cls("lognormal", mu=mu, sigma=sigma)

    @classmethod
    def empirical(cls, bids) -> BidDistribution:
        arr = np.sort(np.asarray(bids, dtype=float).ravel())
        if arr.size == 0:
            raise ValidationError("empirical bid sample is empty")
        if not np.all(np.isfinite(arr)) or arr[0] < 0:
            raise ValidationError("empirical bids must be finite and >= 0")
        arr.setflags(write=False)
        return cls("empirical", sample=arr)

    # -- support -----------------------------------------------------------

    @cached_property
    def support(self) -> tuple[float, float]:
        """Integration domain; the log-normal upper tail is truncated.

        The lower end stays at 0: for 1 < xi < 2 the second-price density
        diverges like ``F**(xi - 2)`` and a truncated lower tail would cost
        about 1e-6 of accuracy.
        """
        if self.kind == "uniform":
            return 0.0, self.v
        if self.kind == "lognormal":
            return 0.0, math.exp(self.mu + self.sigma * Z_TOP)
        return float(self.sample[0]), float(self.sample[-1])

    @property
    def degenerate(self) -> bool:
        """True for an empirical sample with a single distinct value."""
        return self.kind == "empirical" and self.sample[0] == self.sample[-1]

    # -- empirical smoothing -----------------------------------------------

    @cached_property
    def _kde(self) -> tuple[np.ndarray, np.ndarray, float]:
        centres, counts = np.unique(self.sample, return_counts=True)
        weights = counts / counts.sum()
        n = self.sample.size
        std = float(np.std(self.sample, ddof=1)) if n > 1 else 0.0
        q75, q25 = np.quantile(self.sample, [0.75, 0.25])
        spread = min(std, (q75 - q25) / 1.34)
        if spread <= 0:
            spread = std
        h = 0.9 * spread * n ** (-0.2)
        if h <= 0:
            # all bids identical apart from float noise
            h = max(abs(float(self.sample[-1])), 1.0) * 1e-6
        return centres, weights, h

    @property
    def bandwidth(self) -> float:
        """Silverman bandwidth of the empirical density (empirical only)."""
        if self.kind != "empirical":
            raise ValidationError("bandwidth is defined for empirical distributions only")
        return self._kde[2]

    @cached_property
    def _kde_mass(self) -> tuple[float, float]:
        centres, weights, h = self._kde
        lo, hi = self.support
        c_lo = float(weights @ special.ndtr((lo - centres) / h))
        c_hi = float(weights @ special.ndtr((hi - centres) / h))
        return c_lo, c_hi - c_lo

    # -- density and cdf ---------------------------------------------------

    def _pdf_cdf(self, x: float) -> tuple[float, float]:
        """Scalar ``(g(x), F(x))``; kept in plain math for quadrature speed."""
        if self.kind == "uniform":
            if x < 0.0 or x > self.v:
                return 0.0, (0.0 if x < 0.0 else 1.0)
            return 1.0 / self.v, x / self.v
        if self.kind == "lognormal":
            if x <= 0.0:
                return 0.0, 0.0
            z = (math.log(x) - self.mu) / self.sigma
            pdf = math.exp(-0.5 * z * z) / (x * self.sigma * _SQRT2PI)
            return pdf, 0.5 * math.erfc(-z / _SQRT2)
        lo, hi = self.support
        if x < lo:
            return 0.0, 0.0
        if x > hi:
            return 0.0, 1.0
        centres, weights, h = self._kde
        c_lo, mass = self._kde_mass
        pdf = self._kde_density(x)
        if x - lo < 1e-3 * h:
            # cdf(x) - cdf(lo) cancels next to the sample minimum; Simpson on
            # the smooth kernel sum is exact to ~1e-12 relative at this width
            mid = 0.5 * (lo + x)
            area = (x - lo) / 6.0 * (self._kde_density(lo) + 4.0 * self._kde_density(mid) + pdf)
            return pdf / mass, min(area / mass, 1.0)
        cdf = float(weights @ special.ndtr((x - centres) / h))
        return pdf / mass, min(max((cdf - c_lo) / mass, 0.0), 1.0)

    def _kde_density(self, x: float) -> float:
        """Untruncated kernel sum at ``x``."""
        centres, weights, h = self._kde
        z = (x - centres) / h
        return float(weights @ np.exp(-0.5 * z * z)) / (h * _SQRT2PI)

    def pdf(self, x) -> np.ndarray:
        return np.vectorize(lambda t: self._pdf_cdf(float(t))[0], otypes=[float])(x)

    def cdf(self, x) -> np.ndarray:
        return np.vectorize(lambda t: self._pdf_cdf(float(t))[1], otypes=[float])(x)

    def ppf(self, q: float) -> float:
        """Quantile function; the empirical case uses sample quantiles."""
        if self.kind == "uniform":
            return self.v * q
        if self.kind == "lognormal":
            return math.exp(self.mu + self.sigma * NormalDist().inv_cdf(q))
        return float(np.quantile(self.sample, q))

    def _ppf_log(self, log_q: float) -> float:
        """Quantile at ``exp(log_q)``, usable where that probability underflows."""
        if self.kind == "uniform":
            return self.v * math.exp(log_q)
        if self.kind == "lognormal":
            return math.exp(self.mu + self.sigma * float(special.ndtri_exp(log_q)))
        raise ValueError("log-quantiles are defined for analytic distributions only")

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        """Sample bids from the same (smoothed, truncated) law the integrals use."""
        if self.kind == "uniform":
            return rng.uniform(0.0, self.v, size=size)
        if self.kind == "lognormal":
            return rng.lognormal(self.mu, self.sigma, size=size)
        if self.degenerate:
            return np.full(size, float(self.sample[0]))
        centres, weights, h = self._kde
        lo, hi = self.support
        out = np.empty(int(np.prod(size)))
        filled = 0
        while filled < out.size:
            need = out.size - filled
            x = rng.choice(centres, size=need, p=weights) + h * rng.standard_normal(need)
            x = x[(x >= lo) & (x <= hi)]
            out[filled:filled + x.size] = x
            filled += x.size
        return out.reshape(size)


def _check_xi(xi: float) -> float:
    xi = float(xi)
    if not math.isfinite(xi):
        raise ValidationError(f"competition level must be finite, got {xi}")
    if xi < 0:
        raise ValidationError(f"competition level must be >= 0, got {xi}")
    return xi


def _breakpoints(dist: BidDistribution, xi: float, lo: float) -> list[float]:
    hi = dist.support[1]
    qs = [0.5] + [1.0 - c / xi for c in _BREAK_OFFSETS if c < xi]
    if xi < 2.0:
        # the density diverges like F**(xi - 2) at the lower end
        qs += list(_LOWER_TAIL_QUANTILES)
    pts = sorted({dist.ppf(q) for q in qs if 0.0 < q < 1.0})
    return [p for p in pts if lo < p < hi]


def _integrate(f, dist: BidDistribution, xi: float, lo: float | None = None) -> float:
    lo = dist.support[0] if lo is None else lo
    hi = dist.support[1]
    pts = _breakpoints(dist, xi, lo)
    if dist.kind == "lognormal":
        # x spans many decades; z is where the integrand is well scaled
        mu, sigma = dist.mu, dist.sigma
        lo = -Z_FLOOR if lo <= 0.0 else (math.log(lo) - mu) / sigma
        hi = Z_TOP
        pts = [(math.log(p) - mu) / sigma for p in pts]

        def in_z(z: float, f=f) -> float:
            x = math.exp(mu + sigma * z)
            return f(x) * sigma * x

        f = in_z
    value, err = integrate.quad(
        f, lo, hi, points=pts or None, epsabs=EPS_ABS, epsrel=EPS_REL, limit=500
    )
    if not math.isfinite(value):
        raise QuadratureError(f"non-finite integral at xi={xi} ({dist.kind})")
    return value


def _second_density(dist: BidDistribution, xi: float):
    c = xi * (xi - 1.0)

    def density(x: float) -> float:
        g, F = dist._pdf_cdf(x)
        if g == 0.0 or F <= 0.0 or F >= 1.0:
            return 0.0
        # log form: F ** (xi - 2) overflows for xi < 2 deep in the lower tail
        return c * (1.0 - F) * math.exp(math.log(g) + (xi - 2.0) * math.log(F))

    return density


def _against_second(h: Callable[[float], float], dist: BidDistribution, xi: float) -> float:
    """``E[h(X)]`` for X the second highest of ``xi`` bids, ``xi > 1``.

    For xi < 2 a large share of the mass can sit where F is below the
    smallest double (half of it at xi = 1.001), out of reach of an integral
    over x. Below a small quantile ``u1`` the integral is taken over
    ``w = F**(xi - 1)``, where the density is ``xi * (1 - F)``, bounded.
    """
    dens = _second_density(dist, xi)
    if xi >= 2.0:
        return _integrate(lambda x: h(x) * dens(x), dist, xi)
    a = xi - 1.0
    lo = dist.support[0]
    if dist.kind == "empirical":
        # KDE density is positive at the sample minimum, so near it
        # F**(xi - 2) ~ (x - lo)**(xi - 2): factor that out as a quadrature weight
        g_lo = dist._pdf_cdf(lo)[0]
        x1 = min(lo + 0.1 * dist._kde[2], 0.5 * (lo + dist.support[1]))

        def smooth(x: float) -> float:
            g, F = dist._pdf_cdf(x)
            ratio = F / (x - lo) if x > lo else g_lo
            return h(x) * xi * a * g * (1.0 - F) * ratio ** (a - 1.0)

        lower, _ = integrate.quad(
            smooth, lo, x1, weight="alg", wvar=(a - 1.0, 0.0), epsabs=EPS_ABS, epsrel=EPS_REL, limit=500
        )
    else:
        u1 = _SPLIT_QUANTILE
        x1 = dist.ppf(u1)

        def in_w(w: float) -> float:
            if w <= 0.0:
                return h(lo) * xi
            log_u = math.log(w) / a
            return h(dist._ppf_log(log_u)) * xi * (1.0 - math.exp(log_u))

        top = u1**a
        # in w the mass of each decade of F shrinks towards w = 1 as xi -> 1
        pts = sorted({u**a for u in _W_BREAK_QUANTILES} - {0.0, top})
        pts = [w for w in pts if w < top]
        lower, _ = integrate.quad(
            in_w, 0.0, top, points=pts or None, epsabs=EPS_ABS, epsrel=EPS_REL, limit=500
        )
    return lower + _integrate(lambda x: h(x) * dens(x), dist, xi, lo=x1)


def expected_second_price(dist: BidDistribution, xi: float) -> float:
    """Expected payment ``phi(xi)`` of a second-price auction with ``xi`` bidders.

    Zero when ``xi <= 1``: without a second bidder nothing is paid.
    """
    xi = _check_xi(xi)
    if xi <= 1.0:
        return 0.0
    if dist.degenerate:
        return float(dist.sample[0])
    value = _against_second(lambda x: x, dist, xi)
    lo, hi = dist.support
    return min(max(value, 0.0), hi)


def payment_std(dist: BidDistribution, xi: float) -> float:
    """Standard deviation ``psi(xi)`` of the second-price payment.

    Computed as the central second moment so that no cancellation occurs for
    tightly concentrated payments at high ``xi``.
    """
    xi = _check_xi(xi)
    if xi <= 1.0 or dist.degenerate:
        return 0.0
    mean = expected_second_price(dist, xi)
    var = _against_second(lambda x: (x - mean) ** 2, dist, xi)
    scale = dist.support[1] ** 2
    if var < -EPS_ABS * max(scale, 1.0):
        raise QuadratureError(f"negative payment variance {var} at xi={xi}")
    return math.sqrt(max(var, 0.0))


def expected_winning_bid(dist: BidDistribution, xi: float) -> float:
    """Expected highest bid ``pi(xi)``; the single-draw mean at ``xi = 1``, 0 below."""
    xi = _check_xi(xi)
    if xi < 1.0:
        return 0.0
    if dist.degenerate:
        return float(dist.sample[0])

    def integrand(x: float) -> float:
        g, F = dist._pdf_cdf(x)
        if g == 0.0 or F <= 0.0:
            return 0.0
        return x * xi * g * F ** (xi - 1.0)

    value = _integrate(integrand, dist, xi)
    lo, hi = dist.support
    # first order statistic dominates the second; guard quadrature noise
    return min(max(value, expected_second_price(dist, xi)), hi)


def uniform_moments(v: float, xi: float) -> tuple[float, float, float]:
    """Closed-form ``(phi, psi, pi)`` for bids ~ U[0, v].

    The order statistics of uniforms are Beta distributed, which also holds
    for real ``xi``: payment ~ v * Beta(xi - 1, 2), winner ~ v * Beta(xi, 1).
    """
    xi = _check_xi(xi)
    if xi < 1.0:
        return 0.0, 0.0, 0.0
    pi = v * xi / (xi + 1.0)
    if xi == 1.0:
        return 0.0, 0.0, pi
    phi = v * (xi - 1.0) / (xi + 1.0)
    var = v * v * 2.0 * (xi - 1.0) / ((xi + 1.0) ** 2 * (xi + 2.0))
    return phi, math.sqrt(var), pi


@dataclass(frozen=True)
class MonteCarloResult:
    """Simulated auction statistics; iterates as ``(mean_payment, std_payment, mean_winning_bid)``."""

    mean_payment: float
    std_payment: float
    mean_winning_bid: float
    std_winning_bid: float
    payment_m4: float
    n_trials: int

    def __iter__(self) -> Iterator[float]:
        return iter((self.mean_payment, self.std_payment, self.mean_winning_bid))

    @property
    def se_mean_payment(self) -> float:
        return self.std_payment / math.sqrt(self.n_trials)

    @property
    def se_std_payment(self) -> float:
        """Delta-method standard error of the sample standard deviation."""
        if self.std_payment == 0.0:
            return 0.0
        var = self.std_payment ** 2
        return math.sqrt(max(self.payment_m4 - var * var, 0.0) / self.n_trials) / (2.0 * self.std_payment)

    @property
    def se_mean_winning_bid(self) -> float:
        return self.std_winning_bid / math.sqrt(self.n_trials)


def monte_carlo_auction(
    dist: BidDistribution, n_bidders: int, n_trials: int, seed: int
) -> MonteCarloResult:
    """Brute-force second-price auctions; the reference oracle for the integrals."""
    if n_bidders < 1:
        raise ValidationError("n_bidders must be >= 1")
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    payments = np.zeros(n_trials)
    winners = np.empty(n_trials)
    chunk = max(1, 2_000_000 // n_bidders)
    for start in range(0, n_trials, chunk):
        stop = min(start + chunk, n_trials)
        bids = dist.draw(rng, (stop - start, n_bidders))
        if n_bidders == 1:
            winners[start:stop] = bids[:, 0]
            continue
        top = np.partition(bids, n_bidders - 2, axis=1)[:, -2:]
        payments[start:stop] = top[:, 0]
        winners[start:stop] = top[:, 1]
    mean_pay = float(payments.mean())
    centred = payments - mean_pay
    return MonteCarloResult(
        mean_payment=mean_pay,
        std_payment=float(np.sqrt(np.mean(centred ** 2))),
        mean_winning_bid=float(winners.mean()),
        std_winning_bid=float(winners.std()),
        payment_m4=float(np.mean(centred ** 4)),
        n_trials=n_trials,
    )


@dataclass(frozen=True)
class AuctionCurves:
    """The triple ``phi`` (expected payment), ``psi`` (payment std) and ``pi``
    (expected winning bid) as callables of the competition level."""

    phi: Callable[[float], float]
    psi: Callable[[float], float]
    pi: Callable[[float], float]

    @classmethod
    def from_distribution(cls, dist: BidDistribution) -> AuctionCurves:
        """Quadrature-backed curves, memoised per competition level."""
        return cls(
            phi=lru_cache(maxsize=None)(partial(expected_second_price, dist)),
            psi=lru_cache(maxsize=None)(partial(payment_std, dist)),
            pi=lru_cache(maxsize=None)(partial(expected_winning_bid, dist)),
        )

    @classmethod
    def uniform_closed_form(cls, v: float) -> AuctionCurves:
        v = BidDistribution.uniform(v).v
        return cls(
            phi=lambda xi: uniform_moments(v, xi)[0],
            psi=lambda xi: uniform_moments(v, xi)[1],
            pi=lambda xi: uniform_moments(v, xi)[2],
        )

    def scaled(self, c: float) -> AuctionCurves:
        phi, psi, pi = self.phi, self.psi, self.pi
        return AuctionCurves(
            phi=lambda xi: c * phi(xi), psi=lambda xi: c * psi(xi), pi=lambda xi: c * pi(xi)
        )
