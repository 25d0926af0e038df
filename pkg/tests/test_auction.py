import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import quad
from hypothesis import strategies as st

from pgreserve.auction import (
    AuctionCurves,
    BidDistribution,
    expected_second_price,
    expected_winning_bid,
    monte_carlo_auction,
    payment_std,
    uniform_moments,
)
from pgreserve.errors import ValidationError

U1 = BidDistribution.uniform(1.0)
LN = BidDistribution.lognormal(0.0, 0.5)


def test_uniform_examples():
    assert expected_second_price(U1, 3) == pytest.approx(0.5, abs=1e-9)
    assert expected_second_price(U1, 1) == 0.0
    # second order statistic of 3 uniforms is Beta(2,2), variance 1/20
    assert payment_std(U1, 3) == pytest.approx(math.sqrt(0.05), abs=1e-9)
    assert payment_std(U1, 1) == 0.0
    # maximum of 3 uniforms is Beta(3,1)
    assert expected_winning_bid(U1, 3) == pytest.approx(0.75, abs=1e-9)
    assert expected_winning_bid(U1, 1) == pytest.approx(0.5, abs=1e-12)
    assert expected_winning_bid(U1, 0.5) == 0.0


@pytest.mark.parametrize("v", [1.0, 2.5])
@pytest.mark.parametrize("xi", [1.001, 1.01, 1.5, 2, 3, 5, 10, 50])
def test_uniform_quadrature_matches_closed_form(v, xi):
    dist = BidDistribution.uniform(v)
    phi, psi, pi = uniform_moments(v, xi)
    assert expected_second_price(dist, xi) == pytest.approx(phi, abs=1e-6)
    assert payment_std(dist, xi) == pytest.approx(psi, abs=1e-6)
    assert expected_winning_bid(dist, xi) == pytest.approx(pi, abs=1e-6)


def _lognormal_oracle(mu, sigma, xi):
    """Order-statistic moments over the standard-normal quantile z, at 30 digits.

    Working in z keeps the deep lower tail representable, which matters for xi < 2.
    """
    mpmath.mp.dps = 30
    x = lambda z: mpmath.exp(mu + sigma * z)
    second = lambda z: xi * (xi - 1) * mpmath.npdf(z) * (1 - mpmath.ncdf(z)) * mpmath.ncdf(z) ** (xi - 2)
    cuts = [-mpmath.inf, -1000, -100, -40, -10, 0, 10, mpmath.inf]
    m1 = mpmath.quad(lambda z: x(z) * second(z), cuts)
    m2 = mpmath.quad(lambda z: x(z) ** 2 * second(z), cuts)
    win = mpmath.quad(lambda z: x(z) * xi * mpmath.npdf(z) * mpmath.ncdf(z) ** (xi - 1), cuts)
    return float(m1), float(mpmath.sqrt(m2 - m1**2)), float(win)


@pytest.mark.parametrize("xi", [1.05, 1.5, 2.5, 5, 12.25])
def test_lognormal_matches_high_precision_oracle(xi):
    phi, psi, pi = _lognormal_oracle(0.0, 0.5, xi)
    assert expected_second_price(LN, xi) == pytest.approx(phi, rel=1e-7)
    assert payment_std(LN, xi) == pytest.approx(psi, rel=1e-6)
    assert expected_winning_bid(LN, xi) == pytest.approx(pi, rel=1e-7)


# Near xi = 1 half the payment mass sits below F = 1e-300; sigma = 2 spans
# ten decades of bids.
@pytest.mark.parametrize(
    "mu, sigma, xi",
    [(0.75, 0.3, 1.001), (0.75, 0.3, 1.01), (0.0, 1.0, 1.001), (0.0, 0.5, 1.99), (0.0, 2.0, 1.5), (3.0, 2.0, 30.0)],
)
def test_lognormal_oracle_at_the_edges(mu, sigma, xi):
    phi, psi, pi = _lognormal_oracle(mu, sigma, xi)
    dist = BidDistribution.lognormal(mu, sigma)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert expected_second_price(dist, xi) == pytest.approx(phi, rel=1e-9)
        assert payment_std(dist, xi) == pytest.approx(psi, rel=1e-9)
        assert expected_winning_bid(dist, xi) == pytest.approx(pi, rel=1e-9)


def test_lognormal_frozen_values():
    # frozen from the high-precision oracle above
    assert expected_second_price(LN, 5) == pytest.approx(1.3322293149535, rel=1e-9)
    assert expected_winning_bid(LN, 5) == pytest.approx(1.895380197, rel=1e-8)


def test_monte_carlo_uniform_pair():
    mc = monte_carlo_auction(U1, 2, 10**6, seed=3)
    assert mc.mean_payment == pytest.approx(1 / 3, abs=0.002)
    assert mc.n_trials == 10**6


def test_monte_carlo_single_bidder_pays_nothing():
    mc = monte_carlo_auction(LN, 1, 1000, seed=0)
    assert mc.mean_payment == 0.0
    assert mc.std_payment == 0.0


def test_monte_carlo_is_seeded():
    a = monte_carlo_auction(LN, 4, 5000, seed=11)
    b = monte_carlo_auction(LN, 4, 5000, seed=11)
    assert tuple(a) == tuple(b)


def test_monte_carlo_agrees_at_moderate_size():
    mc = monte_carlo_auction(LN, 3, 200_000, seed=5)
    assert abs(mc.mean_payment - expected_second_price(LN, 3)) < 3 * mc.se_mean_payment
    assert abs(mc.std_payment - payment_std(LN, 3)) < 3 * mc.se_std_payment
    assert abs(mc.mean_winning_bid - expected_winning_bid(LN, 3)) < 3 * mc.se_mean_winning_bid


@pytest.mark.parametrize("bad", [math.nan, math.inf, -1.0])
def test_rejects_bad_competition(bad):
    with pytest.raises(ValidationError):
        expected_second_price(U1, bad)


@pytest.mark.parametrize(
    "make",
    [
        lambda: BidDistribution.uniform(0),
        lambda: BidDistribution.uniform(-1),
        lambda: BidDistribution.lognormal(0, 0),
        lambda: BidDistribution.lognormal(math.nan, 1),
        lambda: BidDistribution.empirical([]),
        lambda: BidDistribution.empirical([1.0, -2.0]),
    ],
)
def test_rejects_invalid_distributions(make):
    with pytest.raises(ValidationError):
        make()


def test_empirical_distribution_is_bounded_by_sample():
    sample = np.random.default_rng(2).lognormal(0, 0.5, 400)
    dist = BidDistribution.empirical(sample)
    for xi in (0.5, 1, 2, 4.5, 20):
        phi = expected_second_price(dist, xi)
        assert 0 <= phi <= sample.max()
        assert expected_winning_bid(dist, xi) >= phi - 1e-12


@pytest.mark.parametrize("n", [2, 40, 500])
@pytest.mark.parametrize("xi", [1.001, 1.01, 1.5, 2.5])
def test_empirical_payment_matches_cdf_identity(n, xi):
    # E[X] = hi - integral of P(X <= x); the cdf of the second highest of xi
    # draws, xi F**(xi-1) - (xi-1) F**xi, is bounded, unlike its density
    dist = BidDistribution.empirical(np.random.default_rng(n).lognormal(0, 0.5, n))
    lo, hi = dist.support
    bw = dist._kde[2]
    cuts = sorted({lo, hi, *(lo + bw * 10.0**-k for k in range(1, 31)), *np.quantile(dist.sample, np.linspace(0.01, 0.99, 30))})
    cuts = [c for c in cuts if lo <= c <= hi]

    def below(x):
        F = dist.cdf(x)[()]
        return xi * F ** (xi - 1) - (xi - 1) * F**xi

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        area = sum(quad(below, a, b, epsabs=1e-15, epsrel=1e-14, limit=200)[0] for a, b in zip(cuts[:-1], cuts[1:]))
    assert expected_second_price(dist, xi) == pytest.approx(hi - area, abs=1e-12)


def test_empirical_tracks_its_generator():
    sample = np.random.default_rng(4).lognormal(0, 0.5, 5000)
    dist = BidDistribution.empirical(sample)
    assert expected_second_price(dist, 5) == pytest.approx(expected_second_price(LN, 5), rel=0.05)


analytic = st.one_of(
    st.floats(0.1, 10).map(BidDistribution.uniform),
    st.tuples(st.floats(-1, 1), st.floats(0.2, 1.0)).map(lambda a: BidDistribution.lognormal(*a)),
)


@given(analytic, st.floats(0, 100))
def test_winning_bid_dominates_payment(dist, xi):
    phi = expected_second_price(dist, xi)
    assert phi >= 0
    assert payment_std(dist, xi) >= 0
    assert expected_winning_bid(dist, xi) >= phi - 1e-9


@given(analytic, st.floats(1.0, 99.0), st.floats(0.01, 1.0))
def test_payment_non_decreasing_in_competition(dist, xi, step):
    assert expected_second_price(dist, xi + step) >= expected_second_price(dist, xi) - 1e-9


# Just above 1, psi grows like sqrt(xi - 1) and log-normal phi has unbounded
# slope, so the step bound cannot hold arbitrarily close to 1.
@given(analytic, st.floats(1.02, 99.9))
def test_curves_continuous(dist, xi):
    scale = dist.v if dist.kind == "uniform" else math.exp(dist.mu + dist.sigma**2 / 2)
    for f in (expected_second_price, payment_std, expected_winning_bid):
        assert abs(f(dist, xi + 1e-3) - f(dist, xi)) < 1e-2 * scale


def test_curve_bundle_scaling():
    curves = AuctionCurves.uniform_closed_form(1.0)
    scaled = curves.scaled(4.0)
    for xi in (0.5, 1, 2, 7.5):
        assert scaled.phi(xi) == pytest.approx(4 * curves.phi(xi))
        assert scaled.psi(xi) == pytest.approx(4 * curves.psi(xi))
        assert scaled.pi(xi) == pytest.approx(4 * curves.pi(xi))


def test_curve_bundle_from_distribution_matches_closed_form():
    q = AuctionCurves.from_distribution(U1)
    c = AuctionCurves.uniform_closed_form(1.0)
    for xi in (0, 1, 1.7, 3, 40):
        assert q.phi(xi) == pytest.approx(c.phi(xi), abs=1e-8)
        assert q.psi(xi) == pytest.approx(c.psi(xi), abs=1e-8)
        assert q.pi(xi) == pytest.approx(c.pi(xi), abs=1e-8)
