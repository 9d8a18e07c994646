import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from brmeta import (
    ConfigurationError,
    Dataset,
    FitOptions,
    Method,
    Theta,
    adjusted_score,
    adjusted_score_psi,
    dl_estimate,
    fit,
    log_likelihood,
    solve_psi,
    wls_beta,
)
from brmeta.estimation import default_psi_interval, two_step

from conftest import random_dataset

seeds = st.integers(0, 2**32 - 1)
TOY_OPTS = FitOptions(psi_interval=(0.0, 50.0))


def dl_scalar(y, s2):
    a = 1 / np.asarray(s2)
    mu = np.sum(a * y) / a.sum()
    Q = np.sum(a * (y - mu) ** 2)
    return max(0.0, (Q - (len(y) - 1)) / (a.sum() - np.sum(a**2) / a.sum()))


# options


@pytest.mark.parametrize(
    "kw",
    [
        {"psi_interval": (1.0, 1.0)},
        {"psi_interval": (-1.0, 2.0)},
        {"psi_interval": (0.0, np.inf)},
        {"tol_score": 0.0},
        {"max_iter": 0},
        {"psi_start": -1.0},
    ],
)
def test_fit_options_validation(kw):
    with pytest.raises(ConfigurationError):
        FitOptions(**kw)


def test_default_interval_covers_data_scale():
    d = Dataset([0.0, 2.0, 5.0], [1.0, 0.5, 2.0])
    lo, hi = default_psi_interval(d)
    assert lo == 0.0 and hi == pytest.approx(10 * (2.0 + np.var(d.y, ddof=1)))


# DerSimonian-Laird


def test_dl_toy(toy):
    r = dl_estimate(toy)
    assert r.psi == pytest.approx(1.0) and r.beta[0] == pytest.approx(1.0)
    assert r.method is Method.DL


def test_dl_equal_y_truncates_at_zero():
    r = dl_estimate(Dataset([1.5, 1.5, 1.5], [1.0, 2.0, 0.5]))
    assert r.psi == 0.0 and r.at_boundary


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_dl_general_formula_reduces_to_scalar(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, p=1)
    assert dl_estimate(d).psi == pytest.approx(dl_scalar(d.y, d.sigma2), rel=1e-12, abs=1e-14)


def test_dl_routed_through_fit(toy):
    assert fit(toy, "dl").psi == dl_estimate(toy).psi


# psi solve


@pytest.mark.parametrize(
    "method, psi, boundary",
    [(Method.MEDIAN_BRPL, 5.0, False), (Method.MEAN_BRPL, 1.0, False), (Method.ML, 0.0, True)],
)
def test_solve_psi_toy(toy, method, psi, boundary):
    got, at_b = solve_psi(toy, [1.0], method, TOY_OPTS)
    assert got == pytest.approx(psi, abs=1e-10)
    assert at_b is boundary


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_solve_psi_root_contract(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng)
    beta = wls_beta(d, 0.5)
    for m in (Method.ML, Method.MEAN_BRPL, Method.MEDIAN_BRPL):
        psi, at_b = solve_psi(d, beta, m)
        if not at_b:
            assert abs(adjusted_score_psi(d, Theta(beta, psi), m)) < 1e-6
        elif psi == 0.0:
            assert adjusted_score_psi(d, Theta(beta, 0.0), m) <= 0.0


def test_solve_psi_upper_end_and_expansion():
    d = Dataset([0.0, 10.0, -10.0], [0.1, 0.1, 0.1])
    psi, at_b = solve_psi(d, [0.0], Method.ML, FitOptions(psi_interval=(0.0, 1.0)))
    assert psi == 1.0 and at_b
    psi, at_b = solve_psi(d, [0.0], Method.ML, FitOptions(psi_interval=(0.0, 1.0), expand_upper=True))
    assert not at_b and psi == pytest.approx(200 / 3 - 0.1, rel=1e-10)


# ML profile with a local maximum at psi = 0 and a higher one inside
BIMODAL = Dataset([-4.7855, -6.4804, -8.0444, -5.865, -3.3141], [0.6963, 0.6903, 1.0062, 0.1681, 1.688])


def _ml_profile(d, psi):
    return log_likelihood(d, Theta(wls_beta(d, psi), psi))


def test_bimodal_profile_fixture():
    grid = np.linspace(0.0, 3.0, 301)
    prof = np.array([_ml_profile(BIMODAL, p) for p in grid])
    assert prof[0] > prof[1]  # local maximum at the boundary
    assert prof.max() > prof[0] + 0.1


def test_solve_psi_picks_global_maximum():
    beta = wls_beta(BIMODAL, 0.0)
    f = lambda p: log_likelihood(BIMODAL, Theta(beta, p))
    grid = np.linspace(0.0, 3.0, 3001)
    psi, at_b = solve_psi(BIMODAL, beta, "ml")
    assert not at_b
    assert f(psi) >= max(f(p) for p in grid) - 1e-12


def test_fit_escapes_boundary_mode():
    r = fit(BIMODAL, "ml")
    grid = np.linspace(0.0, 3.0, 3001)
    assert r.converged and not r.at_boundary and r.psi > 0.5
    assert r.objective >= max(_ml_profile(BIMODAL, p) for p in grid) - 1e-12


# full fits


def test_fit_toy_median(toy):
    r = fit(toy, Method.MEDIAN_BRPL, TOY_OPTS)
    assert r.beta[0] == pytest.approx(1.0) and r.psi == pytest.approx(5.0, abs=1e-10)
    assert r.converged and not r.at_boundary and r.iterations <= 2
    assert r.se_beta[0] == pytest.approx(np.sqrt(3.0))


def test_fit_toy_ml_boundary(toy):
    r = fit(toy, "ml", TOY_OPTS)
    assert r.psi == 0.0 and r.at_boundary and r.converged
    assert r.beta[0] == pytest.approx(1.0)


def test_fit_warns_when_pinned_at_upper_end():
    d = Dataset([0.0, 10.0, -10.0], [0.1, 0.1, 0.1])
    with pytest.warns(RuntimeWarning, match="upper end"):
        r = fit(d, "median", FitOptions(psi_interval=(0.0, 1.0)))
    assert r.at_boundary and r.psi == 1.0


def test_nonconvergence_is_reported_not_raised():
    d = random_dataset(np.random.default_rng(0), K=12, p=3)
    r = fit(d, "median", FitOptions(max_iter=1, tol_score=1e-15, psi_start=5.0))
    assert r.iterations == 1 and not r.converged


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from([Method.ML, Method.MEAN_BRPL, Method.MEDIAN_BRPL]))
def test_fixed_point_property(seed, method):
    d = random_dataset(np.random.default_rng(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = fit(d, method)
    assert r.converged
    # a beta-score below tol moves beta by at most about tol * |(X^T W X)^{-1}|
    slack = 1e-6 * d.p * np.max(r.se_beta**2) + 1e-12
    np.testing.assert_allclose(wls_beta(d, r.psi), r.beta, rtol=0, atol=slack)
    s = adjusted_score(d, Theta(r.beta, r.psi), method)
    assert np.max(np.abs(s[:-1])) < 1e-6
    if not r.at_boundary:
        assert abs(s[-1]) < 1e-6
    assert r.se_beta == pytest.approx(np.sqrt(np.diag(np.linalg.inv(d.X.T @ (d.X / (d.sigma2 + r.psi)[:, None])))))


@pytest.mark.parametrize("seed", range(6))
def test_ml_fit_matches_direct_maximization(seed):
    rng = np.random.default_rng(100 + seed)
    d = random_dataset(rng, K=int(rng.integers(6, 15)), p=int(rng.integers(1, 3)))
    r = fit(d, "ml")

    def nll(v):
        return -log_likelihood(d, Theta(v[:-1], v[-1] ** 2))

    x0 = np.r_[np.zeros(d.p), 1.0]
    best = minimize(nll, x0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 40000})
    best = minimize(nll, best.x, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 40000})
    np.testing.assert_allclose(r.beta, best.x[:-1], atol=1e-5)
    assert r.psi == pytest.approx(best.x[-1] ** 2, abs=1e-5)


@pytest.mark.parametrize("K", [4, 9, 20])
def test_equal_variance_fits(K):
    rng = np.random.default_rng(K)
    s2 = 0.4
    y = rng.normal(scale=1.5, size=K)
    d = Dataset(y, np.full(K, s2))
    S = np.sum((y - y.mean()) ** 2)
    for m, denom in (("ml", K), ("mean", K - 1), ("median", K - 5 / 3)):
        r = fit(d, m)
        assert r.psi == pytest.approx(max(0.0, S / denom - s2), abs=1e-8)


def test_ordering_on_random_data():
    d = random_dataset(np.random.default_rng(77), K=10, p=2)
    psis = [fit(d, m).psi for m in ("ml", "mean", "median")]
    assert psis[0] <= psis[1] <= psis[2]


def test_fit_is_deterministic():
    d = random_dataset(np.random.default_rng(8), K=15, p=3)
    a, b = fit(d, "median"), fit(d, "median")
    assert a.psi == b.psi and np.array_equal(a.beta, b.beta) and a.iterations == b.iterations


def test_warm_start_converges_quickly():
    d = random_dataset(np.random.default_rng(9), K=15, p=2)
    r = fit(d, "median")
    again = fit(d, "median", FitOptions(psi_start=r.psi))
    assert again.iterations <= 2 and again.psi == pytest.approx(r.psi, abs=1e-6)


def test_constrained_fit_holds_coefficient():
    d = random_dataset(np.random.default_rng(10), K=12, p=2)
    r = two_step(d, "mean", fixed={1: 0.25})
    assert r.beta[1] == 0.25 and r.converged
    s = adjusted_score(d, Theta(r.beta, r.psi), "mean")
    assert abs(s[0]) < 1e-6
