from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import uniform_auction_records
from pgreserve.auction import BidDistribution, expected_second_price, expected_winning_bid
from pgreserve.curvefit import (
    FittedCurve,
    bin_auctions,
    build_auction_curves,
    fit_lqr,
    fit_pnr,
    fit_rlwr,
    l2_eval,
    predict,
    resample,
    tabulate_curves,
)
from pgreserve.auction import AuctionCurves
from pgreserve.errors import DataError, RankDeficientError, ValidationError

DAYS, HOURS = np.meshgrid(np.arange(7.0), np.arange(24.0), indexing="ij")
D, H = DAYS.ravel(), HOURS.ravel()


def grid(z):
    return np.column_stack([D, H, z])


def rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


# -- PNR ------------------------------------------------------------------


def test_pnr_recovers_plane():
    z = 2 + 3 * D + 4 * H
    m = fit_pnr(grid(z), 1, 1)
    assert np.max(np.abs(predict(m, D, H) - z)) < 1e-8
    assert m.coef.size == 4


@pytest.mark.parametrize("p,q", [(1, 1), (2, 3), (5, 5)])
def test_pnr_constant(p, q):
    m = fit_pnr(grid(np.full(D.size, 7.0)), p, q)
    assert np.max(np.abs(predict(m, D, H) - 7.0)) < 1e-8
    assert m.coef.size == (p + 1) * (q + 1)


def test_pnr_noisy_fit_matches_normal_equations():
    rng = np.random.default_rng(8)
    z = D**2 * H + rng.normal(0, 0.1, D.size)
    m = fit_pnr(grid(z), 2, 1)
    pred = predict(m, D, H)
    assert rmse(pred, z) <= 0.15
    # independent solver: raw monomials, normal equations
    X = np.column_stack([D**i * H**j for i in range(3) for j in range(2)])
    beta = np.linalg.solve(X.T @ X, X.T @ z)
    assert np.max(np.abs(pred - X @ beta)) < 1e-6


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6))
def test_pnr_is_least_squares_optimal(p, q, seed):
    rng = np.random.default_rng(seed)
    z = np.sin(H / 4) * 10 + D + rng.normal(0, 1, D.size)
    m = fit_pnr(grid(z), p, q)
    base = np.sum((predict(m, D, H) - z) ** 2)
    i = rng.integers(m.coef.size)
    for delta in (1e-3, -1e-3):
        coef = m.coef.copy()
        coef.flat[i] += delta
        m2 = type(m)(**{**m.__dict__, "coef": coef})
        assert np.sum((predict(m2, D, H) - z) ** 2) >= base * (1 - 1e-12)
    assert m.diagnostics["optimality_residual"] < 1e-8


def test_pnr_rank_deficient():
    data = np.column_stack([np.zeros(30), np.arange(30.0), np.ones(30)])
    with pytest.raises(RankDeficientError):
        fit_pnr(data, 2, 2)


def test_pnr_degree_bounds():
    with pytest.raises(ValidationError):
        fit_pnr(grid(D), 0, 1)
    with pytest.raises(ValidationError):
        fit_pnr(grid(D), 6, 1)


# -- LQR ------------------------------------------------------------------


def test_lqr_quadratic_interior():
    z = 1 + 0.5 * D - 0.2 * H + 0.1 * D**2 + 0.03 * D * H - 0.01 * H**2
    m = fit_lqr(grid(z), 0.3)
    interior = (D > 0) & (D < 6) & (H > 0) & (H < 23)
    assert np.max(np.abs(predict(m, D[interior], H[interior]) - z[interior])) < 1e-6
    qd, qh = np.array([2.5, 3.25]), np.array([10.5, 7.75])
    exact = 1 + 0.5 * qd - 0.2 * qh + 0.1 * qd**2 + 0.03 * qd * qh - 0.01 * qh**2
    assert np.max(np.abs(predict(m, qd, qh) - exact)) < 1e-6
    assert m.diagnostics["fallback_points"] == 0


def test_lqr_constant():
    m = fit_lqr(grid(np.full(D.size, 3.0)))
    assert np.allclose(predict(m, D, H), 3.0, atol=1e-10)


def test_lqr_beats_plane_on_daily_cycle():
    rng = np.random.default_rng(3)
    z = 50 + 20 * np.sin(2 * np.pi * H / 24) + rng.normal(0, 1, D.size)
    lqr = predict(fit_lqr(grid(z), 0.3), D, H)
    pnr = predict(fit_pnr(grid(z), 1, 1), D, H)
    assert rmse(lqr, z) < rmse(pnr, z)


def test_lqr_bounded_by_neighbourhood():
    rng = np.random.default_rng(5)
    z = rng.uniform(0, 1, D.size)
    m = fit_lqr(grid(z), 0.5)
    pred = predict(m, D[30:40], H[30:40])
    # a local quadratic can overshoot, but not beyond the data scale by much
    assert np.all(np.isfinite(pred))
    assert np.all(np.abs(pred) < 10)


def test_lqr_bandwidth_bounds():
    with pytest.raises(ValidationError):
        fit_lqr(grid(D), 0.0)
    with pytest.raises(ValidationError):
        fit_lqr(grid(D), 1.5)


# -- L2 evaluation --------------------------------------------------------


def test_l2_perfect_model_scores_zero():
    z = 2 + 3 * D + 4 * H
    assert tuple(l2_eval(fit_pnr(grid(z), 1, 1), grid(z))) == pytest.approx((0.0, 0.0), abs=1e-10)


def test_l2_zero_model_scores_one():
    zero = fit_pnr(grid(np.zeros(D.size)), 1, 1)
    score = l2_eval(zero, grid(1 + H))
    assert score.avg == pytest.approx(1.0)
    assert score.std == pytest.approx(0.0, abs=1e-12)
    assert score.n_days == 7


def test_l2_skips_all_zero_days():
    z = np.where(D == 3, 0.0, 1.0 + H)
    score = l2_eval(fit_pnr(grid(z), 1, 1), grid(z))
    assert score.skipped_days == (3.0,)
    assert score.n_days == 6


# -- RLWR -----------------------------------------------------------------

X = np.arange(1.0, 21.0)


@pytest.mark.parametrize("fraction", [0.3, 0.5, 1.0])
@pytest.mark.parametrize("degree", [1, 2])
def test_rlwr_reproduces_line(fraction, degree):
    curve = fit_rlwr(np.column_stack([X, 2 * X + 1]), fraction, degree=degree)
    assert np.max(np.abs(curve(X) - (2 * X + 1))) < 1e-6


def test_rlwr_constant():
    curve = fit_rlwr(np.column_stack([X, np.full(X.size, 4.2)]))
    assert np.allclose(curve(X), 4.2, atol=1e-12)


def test_rlwr_outlier_influence_bounded():
    rng = np.random.default_rng(12)
    true = 2 * X + 1
    y = true + rng.normal(0, 0.05, X.size)
    y[9] *= 50
    keep = np.arange(X.size) != 9
    plain = fit_rlwr(np.column_stack([X, y]), 0.5, robustness_iters=0)
    robust = fit_rlwr(np.column_stack([X, y]), 0.5, robustness_iters=2)
    dev_plain = np.max(np.abs(plain(X[keep]) - true[keep]))
    dev_robust = np.max(np.abs(robust(X[keep]) - true[keep]))
    assert dev_robust < 0.1 * dev_plain


def test_rlwr_floors_at_zero():
    y = np.linspace(1, -1, X.size)
    assert fit_rlwr(np.column_stack([X, y]))(X).min() >= 0
    assert fit_rlwr(np.column_stack([X, y]), nonnegative=False)(X).min() < 0


def test_rlwr_repeated_x_and_widening():
    x = np.repeat([1.0, 2.0, 3.0, 10.0, 11.0], 4)
    y = 3 * x + np.tile([0.1, -0.1, 0.05, -0.05], 5)
    curve = fit_rlwr(np.column_stack([x, y]), 0.2)
    assert np.max(np.abs(curve(np.unique(x)) - 3 * np.unique(x))) < 0.1


def test_rlwr_rejects_small_input():
    with pytest.raises(ValidationError):
        fit_rlwr(np.column_stack([X[:4], X[:4]]))


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 10)), min_size=6, max_size=40))
def test_rlwr_local_linear_within_data_range_at_interior(rows):
    pts = np.array(rows)
    if np.unique(pts[:, 0]).size < 3:
        return
    curve = fit_rlwr(pts, 1.0, robustness_iters=0, degree=0)
    # degree 0 is a weighted mean: a convex combination of the targets
    assert np.all(curve.y >= pts[:, 1].min() - 1e-9)
    assert np.all(curve.y <= pts[:, 1].max() + 1e-9)


# -- resampling -----------------------------------------------------------


def test_resample_sizes_and_membership():
    pts = np.column_stack([np.arange(100.0), np.arange(100.0) ** 2])
    same = resample(pts, 1, seed=4)
    assert same.shape == (100, 2)
    out = resample(pts, Fraction(3, 2), seed=4)
    assert out.shape == (150, 2)
    rows = {tuple(r) for r in pts}
    assert all(tuple(r) in rows for r in out)
    assert np.array_equal(out, resample(pts, Fraction(3, 2), seed=4))
    assert resample(pts, 1.5, seed=4).shape == (150, 2)


def test_resample_rejects_non_positive_rate():
    with pytest.raises(ValidationError):
        resample(np.ones((3, 2)), 0)


# -- fitted curves --------------------------------------------------------


def test_fitted_curve_exact_at_knots_and_clamped():
    c = FittedCurve([1.0, 2.0, 4.0], [0.5, 1.0, 3.0])
    assert c(2.0) == 1.0
    assert c(3.0) == pytest.approx(2.0)
    assert c(0.0) == 0.5
    assert c(10.0) == 3.0
    with pytest.raises(ValidationError):
        FittedCurve([1.0, 1.0], [0.0, 1.0])


def test_tabulate_keeps_order():
    tab = tabulate_curves(AuctionCurves.uniform_closed_form(1.0), np.linspace(0, 20, 81))
    for xi in np.linspace(0, 25, 57):
        assert tab.pi(xi) >= tab.phi(xi)


# -- auction curves from logs --------------------------------------------


def test_bin_statistics():
    rows = [[2, 1.0, 2.0], [2, 3.0, 4.0], [3, 2.0, 5.0]]
    b = bin_auctions(rows)
    assert list(b.xi) == [2, 3]
    assert list(b.count) == [2, 1]
    assert b.mean_payment[0] == 2.0
    assert b.std_payment[0] == 1.0
    assert b.mean_winning_bid[1] == 5.0


@pytest.mark.parametrize("seed", range(4))
def test_uniform_logs_recover_closed_form(seed):
    xis = range(2, 11)
    curves = build_auction_curves(uniform_auction_records(xis, 2000, seed))
    for k in xis:
        assert abs(curves.phi(k) - (k - 1) / (k + 1)) < 0.05


def test_single_bidder_logs_give_zero_payment():
    rows = np.column_stack([np.ones(50), np.zeros(50), np.linspace(0.1, 1, 50)])
    curves = build_auction_curves(rows)
    for xi in (0.5, 1, 3, 20):
        assert curves.phi(xi) == 0.0
        assert curves.psi(xi) == 0.0
    assert curves.pi(1) == pytest.approx(0.55)


@given(st.integers(0, 10**6), st.floats(-0.5, 0.5), st.floats(0.2, 1.0))
def test_lognormal_logs_winning_bid_dominates(seed, mu, sigma):
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(1, 9):
        bids = np.sort(rng.lognormal(mu, sigma, size=(60, k)), axis=1)
        pay = bids[:, -2] if k > 1 else np.zeros(60)
        rows.append(np.column_stack([np.full(60, k), pay, bids[:, -1]]))
    curves = build_auction_curves(np.vstack(rows), resample_rate=Fraction(3, 2), seed=seed)
    for xi in np.linspace(0, 12, 49):
        assert curves.pi(xi) >= curves.phi(xi) >= 0
        assert curves.psi(xi) >= 0


def test_lognormal_logs_close_to_quadrature():
    rng = np.random.default_rng(0)
    dist = BidDistribution.lognormal(0, 0.5)
    rows = []
    for k in range(1, 12):
        bids = np.sort(rng.lognormal(0, 0.5, size=(3000, k)), axis=1)
        rows.append(np.column_stack([np.full(3000, k), bids[:, -2] if k > 1 else 0 * bids[:, 0], bids[:, -1]]))
    curves = build_auction_curves(np.vstack(rows))
    for k in (2, 5, 10):
        assert curves.phi(k) == pytest.approx(expected_second_price(dist, k), abs=0.05)
        assert curves.pi(k) == pytest.approx(expected_winning_bid(dist, k), abs=0.05)


def test_too_few_levels():
    rows = np.array([[2, 1.0, 2.0], [3, 1.0, 2.0]])
    with pytest.raises(DataError):
        build_auction_curves(rows)


def test_few_levels_used_raw():
    rows = np.array([[2, 1.0, 2.0], [3, 1.5, 2.0], [4, 1.8, 2.5]])
    c = build_auction_curves(rows)
    assert c.phi(3) == 1.5
    assert c.pi(3) == 2.0
