import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from timestate.gaussian import (log_bvn_orthant, log_orthant, sample_truncated_normal,
                                truncated_moments)


def _random_cov(rng, m):
    a = rng.normal(size=(m, m))
    c = a @ a.T + 0.3 * np.eye(m)
    return c


def test_zero_mean_bivariate_closed_form():
    for rho in (-0.95, -0.5, 0.0, 0.3, 0.8, 0.97):
        ref = 0.25 + np.arcsin(rho) / (2 * np.pi)
        got = np.exp(log_bvn_orthant(0.0, 0.0, rho))
        assert got == pytest.approx(ref, rel=1e-12)


def test_zero_mean_trivariate_closed_form(rng):
    for _ in range(20):
        cov = _random_cov(rng, 3)
        d = np.sqrt(np.diag(cov))
        r = cov / np.outer(d, d)
        ref = 0.125 + (np.arcsin(r[0, 1]) + np.arcsin(r[0, 2]) + np.arcsin(r[1, 2])) / (4 * np.pi)
        got = np.exp(log_orthant(np.zeros((1, 3)), cov))[0]
        assert got == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_against_scipy_mvn(rng, m):
    cov = _random_cov(rng, m)
    means = rng.normal(0.0, 1.5, size=(15, m))
    got = np.exp(log_orthant(means, cov))
    for mu, g in zip(means, got):
        # P(X > 0) = P(-X < 0) with -X ~ N(-mu, cov)
        if m == 1:
            ref = sps.norm.cdf(mu[0] / np.sqrt(cov[0, 0]))
        else:
            ref = sps.multivariate_normal.cdf(np.zeros(m), mean=-mu, cov=cov, abseps=1e-11,
                                              releps=1e-8, maxpts=2 * 10**6)
        assert g == pytest.approx(ref, rel=1e-5, abs=1e-10)


def test_deep_tail_is_finite_and_ordered():
    cov = np.array([[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 1.0]])
    shifts = np.linspace(-2.0, -12.0, 11)
    vals = log_orthant(np.column_stack([shifts] * 3), cov)
    assert np.all(np.isfinite(vals))
    assert np.all(np.diff(vals) < 0)
    # positive dependence: between the product of marginals and one marginal
    assert 3 * sps.norm.logcdf(-12.0) <= vals[-1] <= sps.norm.logcdf(-12.0)


def test_bivariate_tail_matches_asymptotics():
    # for rho = 0 the orthant probability factorises exactly
    h = np.array([-10.0, -20.0, -30.0])
    got = log_bvn_orthant(h, h, 0.0)
    assert np.allclose(got, 2 * sps.norm.logcdf(h), rtol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-0.95, 0.95), st.floats(0.01, 2.0))
def test_bivariate_monotone_in_mean(h1, h2, rho, step):
    a = log_bvn_orthant(h1, h2, rho)
    b = log_bvn_orthant(h1 + step, h2, rho)
    assert b >= a - 1e-12
    assert a <= 0.0


def test_truncated_moments_against_monte_carlo(rng):
    cov = np.array([[1.0, 0.5, -0.2], [0.5, 2.0, 0.3], [-0.2, 0.3, 0.7]])
    mean = np.array([[0.3, -0.4, 0.1]])
    _, m1, m2 = truncated_moments(mean, cov)
    draws = rng.multivariate_normal(mean[0], cov, size=2_000_000)
    keep = draws[np.all(draws > 0, axis=1)]
    se = keep.std(axis=0) / np.sqrt(len(keep))
    assert np.all(np.abs(m1[0] - keep.mean(axis=0)) < 4 * se)
    assert np.allclose(m2[0], np.cov(keep.T), atol=0.01)


def test_truncated_moments_one_dimension():
    mu, s = 0.4, 1.3
    _, m1, m2 = truncated_moments(np.array([[mu]]), np.array([[s * s]]))
    ref = sps.truncnorm(-mu / s, np.inf, loc=mu, scale=s)
    assert m1[0, 0] == pytest.approx(ref.mean(), rel=1e-10)
    assert m2[0, 0, 0] == pytest.approx(ref.var(), rel=1e-9)


def test_sampler_respects_sides(rng):
    up = sample_truncated_normal(rng, -6.0, 0.5, True, size=10_000)
    down = sample_truncated_normal(rng, 6.0, 0.5, False, size=10_000)
    assert np.all(up > 0) and np.all(down < 0)


def test_sampler_distribution(rng):
    x = sample_truncated_normal(rng, 1.2, 0.6, True, size=50_000)
    ref = sps.truncnorm(-2.0, np.inf, loc=1.2, scale=0.6)
    assert sps.kstest(x, ref.cdf).pvalue > 1e-3


@pytest.mark.parametrize("rho", [0.93, 0.99, -0.95])
@pytest.mark.parametrize("h,k", [(0.0, 0.0), (1e-190, -1e-310), (0.0, -0.5), (0.7, 0.0)])
def test_strong_correlation_edge_arguments(h, k, rho):
    # the unstable path reports the closed form directly, without tail fallback
    got = np.exp(log_bvn_orthant(h, k, rho, stable=False))
    ref = sps.multivariate_normal.cdf([h, k], mean=[0, 0], cov=[[1, rho], [rho, 1]],
                                      abseps=1e-12, releps=1e-10)
    assert got == pytest.approx(ref, abs=1e-7)
