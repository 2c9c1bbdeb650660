import warnings
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from tfkm.fkm import Membership
from tfkm.regression import (CollinearityError, RegressionDesign, fit_fe, fit_iv, fit_ols,
                             format_table, share_instrument, stars, stepwise_backward, vif,
                             winsorize_design)


def panel(seed, G=30, m=8, k=2, rho=0.5, beta=(1.0, -0.5), ind_effect=0.0):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(G), m)
    n = G * m
    Xb = rng.normal(size=(n, k))
    shock = rng.normal(size=G)[g]
    e = np.sqrt(rho) * shock + np.sqrt(1 - rho) * rng.normal(size=n)
    y = 0.5 + Xb @ np.asarray(beta[:k]) + e
    return y, Xb, g


def sandwich_oracle(M, e, g, factor):
    bread = np.linalg.inv(M.T @ M)
    meat = np.zeros((M.shape[1], M.shape[1]))
    for grp in np.unique(g):
        sel = g == grp
        s = M[sel].T @ e[sel]
        meat += np.outer(s, s)
    return factor * bread @ meat @ bread


def test_exact_fit_recovered():
    rng = np.random.default_rng(0)
    Xb = rng.normal(size=(40, 3))
    y = 2.0 + Xb @ np.array([1.0, -3.0, 0.25])
    fit = fit_ols(RegressionDesign(y=y, cluster_id=np.arange(40) % 5, Xb=Xb))
    np.testing.assert_allclose(fit.coef, [2.0, 1.0, -3.0, 0.25], atol=1e-10)


def test_clustered_covariance_matches_group_sum():
    y, Xb, g = panel(1, G=7, m=5)
    fit = fit_ols(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
    M = np.column_stack([np.ones(y.size), Xb])
    e = y - M @ fit.coef
    n, K, G = y.size, M.shape[1], 7
    oracle = sandwich_oracle(M, e, g, G / (G - 1) * (n - 1) / (n - K))
    np.testing.assert_allclose(fit.cov, oracle, atol=1e-10, rtol=0)
    assert fit.df == G - 1
    np.testing.assert_allclose(fit.tstat, fit.coef / np.sqrt(np.diag(fit.cov)))
    np.testing.assert_allclose(fit.cov, fit.cov.T)
    assert np.linalg.eigvalsh(fit.cov).min() > -1e-12


def test_singleton_clusters_reduce_to_hc1():
    rng = np.random.default_rng(2)
    Xb = rng.normal(size=(30, 2))
    y = Xb[:, 0] + rng.normal(size=30) * (1 + np.abs(Xb[:, 1]))
    fit = fit_ols(RegressionDesign(y=y, cluster_id=np.arange(30), Xb=Xb))
    M = np.column_stack([np.ones(30), Xb])
    e = y - M @ fit.coef
    bread = np.linalg.inv(M.T @ M)
    hc1 = 30 / 27 * bread @ (M.T * e ** 2) @ M @ bread
    np.testing.assert_allclose(fit.cov, hc1, atol=1e-12)


def test_residuals_orthogonal_to_design():
    y, Xb, g = panel(3)
    fit = fit_ols(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
    M = np.column_stack([np.ones(y.size), Xb])
    e = y - M @ fit.coef
    assert np.abs(M.T @ e).max() / np.abs(M).max() <= 1e-8


def test_rank_deficiency_names_columns():
    rng = np.random.default_rng(4)
    a = rng.normal(size=20)
    Xb = np.column_stack([a, rng.normal(size=20), 2 * a])
    with pytest.raises(CollinearityError) as err:
        fit_ols(RegressionDesign(y=rng.normal(size=20), cluster_id=np.arange(20) % 4, Xb=Xb,
                                 x_names=["a", "b", "a2"]))
    assert set(err.value.columns) == {"a", "a2"}


def test_needs_two_clusters():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        fit_ols(RegressionDesign(y=rng.normal(size=10), cluster_id=np.zeros(10), Xb=rng.normal(size=(10, 1))))


def test_design_validation():
    with pytest.raises(ValueError):
        RegressionDesign(y=np.ones(4), cluster_id=np.arange(4), ind=np.array([0, 1, 2, 0]))
    with pytest.raises(ValueError):
        RegressionDesign(y=np.ones(4), cluster_id=np.arange(3))


@pytest.mark.slow
def test_clustered_coverage_monte_carlo():
    hits = 0
    for rep in range(200):
        y, Xb, g = panel(100 + rep, G=40, m=10)
        fit = fit_ols(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
        q = stats.t.ppf(0.975, fit.df)
        hits += abs(fit["x0"] - 1.0) <= q * fit.se[1]
    assert 0.90 <= hits / 200 <= 0.99


def fe_data(seed, G=12, m=6):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(G), m)
    Xb = rng.normal(size=(G * m, 2)) + rng.normal(size=G)[g, None]
    y = rng.normal(scale=3.0, size=G)[g] + Xb @ np.array([0.7, -1.2]) + rng.normal(size=G * m)
    return y, Xb, g


def test_fe_demean_matches_dummies():
    y, Xb, g = fe_data(6)
    d = RegressionDesign(y=y, cluster_id=g, Xb=Xb, fe=True)
    a = fit_fe(d, method="demean")
    b = fit_fe(d, method="dummies")
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-9)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-9)
    assert a.r2 == pytest.approx(b.r2, abs=1e-12)


def test_fe_pure_country_shift_gives_zero_slopes():
    rng = np.random.default_rng(7)
    g = np.repeat(np.arange(6), 5)
    y = rng.normal(size=6)[g]
    fit = fit_fe(RegressionDesign(y=y, cluster_id=g, Xb=rng.normal(size=(30, 2))))
    np.testing.assert_allclose(fit.coef, 0.0, atol=1e-12)


def test_fe_singleton_country_reported():
    y, Xb, g = fe_data(8)
    g = g.copy()
    g[-1] = 99
    with pytest.warns(RuntimeWarning, match="one observation"):
        fit = fit_fe(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
    assert fit.singleton_clusters == [99]


@pytest.mark.slow
def test_fe_recovery_monte_carlo():
    inside = 0
    for rep in range(200):
        y, Xb, g = fe_data(300 + rep, G=20, m=8)
        fit = fit_fe(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
        inside += np.all(np.abs(fit.coef - np.array([0.7, -1.2])) <= 3 * fit.se)
    assert inside / 200 >= 0.95


def test_share_instrument_examples():
    labels = np.array([1, 0, 0, 0, 2, 2, -1])
    country = np.array(["A", "A", "A", "A", "B", "B", "B"])
    np.testing.assert_allclose(share_instrument(Membership(labels, 3), country, 1),
                               [0.25] * 4 + [0.0] * 3)
    np.testing.assert_allclose(share_instrument(labels, country, 2), [0.0] * 4 + [1.0] * 3)
    with pytest.raises(ValueError):
        share_instrument(np.array([-1, 0]), np.array(["A", "B"]), 0)


def test_share_instrument_matches_tabulation():
    rng = np.random.default_rng(9)
    labels = rng.integers(-1, 4, 300)
    country = rng.integers(0, 9, 300)
    got = share_instrument(labels, country, 2)
    for k in range(9):
        rows = [lab for lab, c in zip(labels, country) if c == k and lab >= 0]
        tally = Counter(rows)
        expected = tally[2] / len(rows)
        assert np.all(got[country == k] == expected)


def iv_data(seed, G=40, m=10, c_true=1.0):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(G), m)
    n = G * m
    share = rng.uniform(0.1, 0.9, G)[g]
    u = rng.normal(size=n)
    ind = (share + 0.4 * u + 0.3 * rng.normal(size=n) > 0.5).astype(float)
    x = rng.normal(size=n)
    y = 0.2 + 0.5 * x + c_true * ind + u
    return RegressionDesign(y=y, cluster_id=g, Xb=x[:, None], ind=ind, instrument=share)


def test_iv_with_dummy_as_instrument_equals_ols():
    d = iv_data(10)
    d.instrument = d.ind.copy()
    np.testing.assert_allclose(fit_iv(d).coef, fit_ols(d).coef, atol=1e-9)


def test_iv_matches_closed_form():
    d = iv_data(11)
    fit = fit_iv(d)
    W = np.column_stack([np.ones(d.n), d.Xb, d.ind])
    Q = np.column_stack([np.ones(d.n), d.Xb, d.instrument])
    theta = np.linalg.solve(Q.T @ W, Q.T @ d.y)
    np.testing.assert_allclose(fit.coef, theta, atol=1e-10)
    e = d.y - W @ theta
    B = np.linalg.inv(Q.T @ W)
    meat = sum(np.outer(Q[d.cluster_id == k].T @ e[d.cluster_id == k],
                        Q[d.cluster_id == k].T @ e[d.cluster_id == k]) for k in range(40))
    factor = 40 / 39 * (d.n - 1) / (d.n - 3)
    np.testing.assert_allclose(fit.cov, factor * B @ meat @ B.T, atol=1e-10)
    assert fit.first_stage_f > 10


def test_iv_fixed_effects_runs():
    d = iv_data(12)
    d.fe = True
    # a country-level share is absorbed by the country effects
    with pytest.warns(RuntimeWarning, match="weak instrument"):
        fit_iv(d)
    d.instrument = d.instrument + np.random.default_rng(0).normal(scale=0.2, size=d.n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_iv(d)
    assert fit.names == ["x0", "IND"]


def test_iv_requires_instrument_and_warns_when_weak():
    d = iv_data(13)
    with pytest.raises(ValueError):
        fit_iv(RegressionDesign(y=d.y, cluster_id=d.cluster_id, ind=d.ind))
    d.instrument = np.random.default_rng(1).normal(size=d.n)
    with pytest.warns(RuntimeWarning, match="weak instrument"):
        fit_iv(d)


@pytest.mark.slow
def test_iv_less_biased_than_ols():
    b_iv, b_ols = [], []
    for rep in range(200):
        d = iv_data(500 + rep)
        b_iv.append(abs(fit_iv(d)["IND"] - 1.0))
        b_ols.append(abs(fit_ols(d)["IND"] - 1.0))
    assert np.mean(b_iv) < np.mean(b_ols)


def test_stepwise_keeps_significant_model():
    rng = np.random.default_rng(14)
    g = np.repeat(np.arange(30), 10)
    Xb = rng.normal(size=(300, 3))
    y = Xb @ np.array([2.0, -2.0, 1.5]) + rng.normal(size=300)
    fit = stepwise_backward(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
    assert fit.names == ["const", "x0", "x1", "x2"]
    assert fit.dropped == [] and fit.method == "stepwise"


def test_stepwise_removes_single_noise_term():
    rng = np.random.default_rng(15)
    g = np.repeat(np.arange(20), 5)
    x = rng.normal(size=100)
    y = rng.normal(size=100)
    d = RegressionDesign(y=y, cluster_id=g, Xb=x[:, None])
    p = fit_ols(d).pvalues[1]
    fit = stepwise_backward(d)
    if p > 0.2:
        assert fit.names == ["const"] and fit.dropped == ["x0"]
    else:
        assert fit.names == ["const", "x0"]


@pytest.mark.slow
def test_stepwise_retains_true_predictor():
    kept = 0
    for rep in range(100):
        rng = np.random.default_rng(700 + rep)
        g = np.repeat(np.arange(25), 8)
        Xb = rng.normal(size=(200, 6))
        y = 0.8 * Xb[:, 2] + rng.normal(size=200)
        fit = stepwise_backward(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
        kept += "x2" in fit.names
    assert kept >= 90


def hadamard_columns():
    H = np.array([[1.0]])
    while H.shape[0] < 8:
        H = np.block([[H, H], [H, -H]])
    return H[:, 1:4]


def test_vif_orthogonal_exactly_one():
    v = vif(hadamard_columns())
    assert v.tolist() == [1.0, 1.0, 1.0]


def test_vif_identical_columns_infinite():
    rng = np.random.default_rng(16)
    a = rng.normal(size=30)
    v = vif(np.column_stack([a, a, rng.normal(size=30)]))
    assert np.isinf(v[0]) and np.isinf(v[1]) and np.isfinite(v[2])


def test_vif_matches_auxiliary_regressions():
    rng = np.random.default_rng(17)
    M = rng.normal(size=(60, 4)) @ rng.normal(size=(4, 4))
    v = vif(M)
    for j in range(4):
        others = np.column_stack([np.ones(60), np.delete(M, j, axis=1)])
        beta = np.linalg.lstsq(others, M[:, j], rcond=None)[0]
        r2 = 1 - ((M[:, j] - others @ beta) ** 2).sum() / ((M[:, j] - M[:, j].mean()) ** 2).sum()
        assert v[j] == pytest.approx(1 / (1 - r2), abs=1e-8)
    with pytest.raises(ValueError):
        vif(M[:, :1])


def test_winsorize_design_keeps_rows():
    d = iv_data(18)
    w = winsorize_design(d, 0.05)
    assert w.n == d.n and w.Xb.shape == d.Xb.shape
    np.testing.assert_array_equal(w.ind, d.ind)
    assert w.y.max() <= d.y.max()


def test_stars_and_table():
    assert [stars(p) for p in (0.005, 0.03, 0.07, 0.2)] == ["***", "**", "*", ""]
    y, Xb, g = panel(19)
    fit = fit_ols(RegressionDesign(y=y, cluster_id=g, Xb=Xb))
    text = format_table([fit], ["OLS"])
    assert "x0" in text and "(" in text and "R2" in text
    assert text.splitlines()[-1].startswith("t-statistics")
