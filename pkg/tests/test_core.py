import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from repcsmc.core import (
    DegenerateWeightsError,
    GaussianDensity,
    GaussianMixture,
    categorical_sample,
    gaussian_logpdf,
    gaussian_partial_product,
    gaussian_product,
    logsumexp,
    normalize_log_weights,
    sample_gaussian_mixture,
)

from conftest import random_spd


def dense_logpdf(x, mean, cov):
    # independent reference: explicit inverse and determinant
    r = x - mean
    return -0.5 * (r @ np.linalg.inv(cov) @ r + np.log(np.linalg.det(cov)) + len(x) * np.log(2 * np.pi))


def test_logpdf_standard_normal_at_zero():
    assert gaussian_logpdf(np.zeros(1), GaussianDensity([0.0], [[1.0]])) == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_logpdf_at_mean(rng):
    cov = random_spd(rng, 4)
    g = GaussianDensity(rng.standard_normal(4), cov)
    expected = -0.5 * (4 * np.log(2 * np.pi) + np.log(np.linalg.det(cov)))
    assert g.logpdf(g.mean) == pytest.approx(expected, rel=1e-12)


def test_logpdf_random_3d_matches_dense(rng):
    cov = random_spd(rng, 3)
    mean = rng.standard_normal(3)
    g = GaussianDensity(mean, cov)
    xs = rng.standard_normal((20, 3))
    got = g.logpdf(xs)
    assert got.shape == (20,)
    np.testing.assert_allclose(got, [dense_logpdf(x, mean, cov) for x in xs], rtol=1e-12)


def test_logpdf_integrates_to_one():
    g = GaussianDensity([0.3], [[2.5]])
    sd = np.sqrt(2.5)
    grid = np.linspace(0.3 - 10 * sd, 0.3 + 10 * sd, 20001)
    total = integrate.trapezoid(np.exp(g.logpdf(grid[:, None])), grid)
    assert abs(total - 1.0) < 1e-6


def test_density_rejects_bad_covariances():
    with pytest.raises(np.linalg.LinAlgError):
        GaussianDensity([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianDensity([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianDensity([0.0], np.eye(2))


def test_product_symmetric_case():
    g, log_scale = gaussian_product(GaussianDensity([0.0], [[1.0]]), GaussianDensity([0.0], [[1.0]]))
    np.testing.assert_allclose(g.mean, [0.0])
    np.testing.assert_allclose(g.cov, [[0.5]])
    assert log_scale == pytest.approx(stats.norm(0, np.sqrt(2)).logpdf(0))


def test_product_shifted_means_on_grid():
    g1, g2 = GaussianDensity([1.0], [[1.0]]), GaussianDensity([-1.0], [[1.0]])
    g, log_scale = gaussian_product(g1, g2)
    np.testing.assert_allclose(g.mean, [0.0], atol=1e-15)
    np.testing.assert_allclose(g.cov, [[0.5]])
    assert log_scale == pytest.approx(stats.norm(-1, np.sqrt(2)).logpdf(1))
    grid = np.linspace(-4, 4, 81)[:, None]
    np.testing.assert_allclose(g1.logpdf(grid) + g2.logpdf(grid), log_scale + g.logpdf(grid), rtol=1e-12)


def test_product_pointwise_random_2d(rng):
    g1 = GaussianDensity(rng.standard_normal(2), random_spd(rng, 2))
    g2 = GaussianDensity(rng.standard_normal(2), random_spd(rng, 2))
    g, log_scale = gaussian_product(g1, g2)
    x = 2 * rng.standard_normal((100, 2))
    lhs = np.exp(g1.logpdf(x) + g2.logpdf(x))
    rhs = np.exp(log_scale + g.logpdf(x))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


def test_product_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_product(GaussianDensity([0.0], [[1.0]]), GaussianDensity([0.0, 0.0], np.eye(2)))


def test_partial_product_full_overlap_equals_product(rng):
    g1 = GaussianDensity(rng.standard_normal(3), random_spd(rng, 3))
    g2 = GaussianDensity(rng.standard_normal(3), random_spd(rng, 3))
    a, sa = gaussian_product(g1, g2)
    b, sb = gaussian_partial_product(g1, g2)
    np.testing.assert_allclose(a.mean, b.mean)
    np.testing.assert_allclose(a.cov, b.cov)
    assert sa == sb


def test_partial_product_empty_factor(rng):
    g1 = GaussianDensity(rng.standard_normal(3), random_spd(rng, 3))
    g, s = gaussian_partial_product(g1, GaussianDensity(np.zeros(0), np.zeros((0, 0))))
    assert g is g1 and s == 0.0


def test_partial_product_d3_p2_pointwise(rng):
    g_full = GaussianDensity(rng.standard_normal(3), random_spd(rng, 3))
    g_sub = GaussianDensity(rng.standard_normal(2), random_spd(rng, 2))
    g, log_scale = gaussian_partial_product(g_full, g_sub)
    x = rng.standard_normal((200, 3))
    lhs = g_full.logpdf(x) + g_sub.logpdf(x[:, :2])
    np.testing.assert_allclose(np.exp(lhs), np.exp(log_scale + g.logpdf(x)), rtol=1e-10)


@st.composite
def spd_pair(draw, max_d=4):
    d = draw(st.integers(1, max_d))
    p = draw(st.integers(1, d))
    seed = draw(st.integers(0, 2**32 - 1))
    return d, p, np.random.default_rng(seed)


@settings(max_examples=60, deadline=None)
@given(spd_pair())
def test_partial_product_identity_property(case):
    d, p, r = case
    g_full = GaussianDensity(r.standard_normal(d), random_spd(r, d))
    g_sub = GaussianDensity(r.standard_normal(p), random_spd(r, p))
    g, log_scale = gaussian_partial_product(g_full, g_sub)
    x = g_full.mean + r.standard_normal((10, d))
    lhs = g_full.logpdf(x) + g_sub.logpdf(x[:, :p])
    rhs = log_scale + g.logpdf(x)
    np.testing.assert_allclose(np.exp(lhs - rhs), 1.0, rtol=1e-10)


def test_logsumexp_basics():
    assert logsumexp([0.0, 0.0]) == pytest.approx(np.log(2))
    assert logsumexp([-np.inf, -np.inf]) == -np.inf
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + np.log(2))
    a = np.array([[0.0, 1.0], [2.0, -np.inf]])
    np.testing.assert_allclose(logsumexp(a, axis=1), [np.log(1 + np.e), 2.0])
    np.testing.assert_allclose(logsumexp(a[:, :1], axis=1), [0.0, 2.0])


def test_categorical_one_hot(rng):
    lw = np.array([-np.inf, 0.0, -np.inf])
    assert all(categorical_sample(lw, rng) == 1 for _ in range(200))
    assert np.all(categorical_sample(lw, rng, 500) == 1)


def test_categorical_all_neg_inf_raises(rng):
    with pytest.raises(DegenerateWeightsError):
        categorical_sample(np.full(4, -np.inf), rng)


def test_categorical_nan_is_contract_violation(rng):
    with pytest.raises(AssertionError):
        categorical_sample(np.array([0.0, np.nan]), rng)


def test_categorical_uniform_frequencies(rng):
    n = 100_000
    counts = np.bincount(categorical_sample(np.zeros(4), rng, n), minlength=4)
    band = 3 * np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < band)


def test_categorical_one_to_three(rng):
    n = 100_000
    draws = categorical_sample(np.log([1.0, 3.0]), rng, n)
    freq = np.mean(draws == 1)
    assert abs(freq - 0.75) < 3 * np.sqrt(0.75 * 0.25 / n)


def test_categorical_chi_square(rng):
    p = np.array([0.1, 0.2, 0.3, 0.05, 0.35])
    n = 100_000
    counts = np.bincount(categorical_sample(np.log(p), rng, n), minlength=5)
    assert stats.chisquare(counts, n * p).pvalue > 0.001


def test_categorical_shift_invariance():
    lw = np.random.default_rng(1).standard_normal(50)
    a = categorical_sample(lw, np.random.default_rng(7), 1000)
    b = categorical_sample(lw + 1234.5, np.random.default_rng(7), 1000)
    c = categorical_sample(lw - 700.0, np.random.default_rng(7), 1000)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    assert np.argmax(normalize_log_weights(lw)) == np.argmax(normalize_log_weights(lw + 1e4))


def test_normalize_log_weights():
    w = normalize_log_weights([0.0, np.log(3.0), -np.inf])
    np.testing.assert_allclose(w, [0.25, 0.75, 0.0])
    with pytest.raises(DegenerateWeightsError):
        normalize_log_weights([-np.inf])


def test_mixture_single_component(rng):
    mix = GaussianMixture([0.0], [GaussianDensity([2.0, -1.0], np.eye(2))])
    draws = np.array([sample_gaussian_mixture(mix, rng) for _ in range(20_000)])
    assert np.all(np.abs(draws.mean(axis=0) - [2.0, -1.0]) < 4 / np.sqrt(len(draws)))


def test_mixture_two_modes_moments(rng):
    mix = GaussianMixture.from_pairs([(0.0, GaussianDensity([-5.0], [[1.0]])), (0.0, GaussianDensity([5.0], [[1.0]]))])
    draws = np.array([mix.sample(rng)[0] for _ in range(100_000)])
    assert abs(draws.mean()) < 4 * np.sqrt(26 / len(draws))
    assert draws.var() == pytest.approx(26.0, rel=0.02)


def test_mixture_zero_weight_component(rng):
    only = GaussianDensity([1.0], [[0.5]])
    mix = GaussianMixture([0.0, -np.inf], [only, GaussianDensity([100.0], [[1.0]])])
    draws = np.array([mix.sample(rng)[0] for _ in range(5000)])
    assert draws.max() < 10
    x = np.linspace(-2, 3, 11)[:, None]
    np.testing.assert_allclose(mix.logpdf(x), only.logpdf(x))


def test_mixture_invariants():
    g = GaussianDensity([0.0], [[1.0]])
    with pytest.raises(ValueError):
        GaussianMixture([], [])
    with pytest.raises(ValueError):
        GaussianMixture([-np.inf], [g])
    with pytest.raises(ValueError):
        GaussianMixture([0.0, 0.0], [g])
