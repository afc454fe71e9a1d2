import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sublsq import ConfigurationError, DiscreteUniform, DrawSeed, GaussianStandard, NoisyLinear, ProductScalar, draw_points
from sublsq.sampling import BLOCK_SIZE, draw_batch, draw_block, is_subgaussian


def test_singleton_support():
    mu = DiscreteUniform(np.array([[1.5, -2.0]]))
    pts = draw_points(mu, 3, DrawSeed(1, 0))
    np.testing.assert_array_equal(pts, [[1.5, -2.0]] * 3)


def test_without_replacement_rejects_oversized_draw():
    mu = DiscreteUniform(np.zeros((3, 1)), replace=False)
    with pytest.raises(ConfigurationError):
        draw_points(mu, 4, DrawSeed(0, 0))


def test_discrete_frequencies_chi_square():
    M = 2106
    mu = DiscreteUniform(np.arange(M, dtype=float)[:, None])
    idx = draw_batch(mu, 1, 123, 0, 1_000_000).ravel()
    counts = np.bincount(idx, minlength=M)
    expected = 1_000_000 / M
    se = math.sqrt(expected * (1 - 1 / M))
    assert np.max(np.abs(counts - expected)) < 5 * se
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert stats.chi2.sf(chi2, M - 1) > 1e-4


def test_gaussian_moments():
    pts = draw_batch(GaussianStandard(4), 6, 9, 0, 1_000_000 // 24 + 1)
    x = pts.ravel()[:1_000_000]
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.01
    assert stats.kstest(x[:100_000], "norm").pvalue > 1e-4


def test_draw_points_matches_batch_across_blocks():
    mu = GaussianStandard(2)
    start = BLOCK_SIZE - 3
    batch = draw_batch(mu, 4, 77, start, 6)
    for i in range(6):
        np.testing.assert_array_equal(draw_points(mu, 4, DrawSeed(77, start + i)), batch[i])


def test_blocks_are_reproducible_and_distinct():
    mu = GaussianStandard(3)
    a, b = draw_block(mu, 2, 5, 0), draw_block(mu, 2, 5, 0)
    np.testing.assert_array_equal(a, b)
    c = draw_block(mu, 2, 5, 1)
    assert not np.array_equal(a, c)


def test_distinct_draws_uncorrelated():
    pts = draw_batch(GaussianStandard(1), 1, 3, 0, 100_000).ravel()
    r = np.corrcoef(pts[:-1], pts[1:])[0, 1]
    assert abs(r) < 0.01
    other = draw_batch(GaussianStandard(1), 1, 4, 0, 100_000).ravel()
    assert abs(np.corrcoef(pts, other)[0, 1]) < 0.01


@settings(max_examples=50, deadline=None)
@given(M=st.integers(1, 40), data=st.data(), seed=st.integers(0, 2**63 - 1))
def test_without_replacement_has_no_duplicates(M, data, seed):
    m = data.draw(st.integers(1, M))
    mu = DiscreteUniform(np.arange(M, dtype=float)[:, None], replace=False)
    idx = draw_batch(mu, m, seed, 0, 200)
    assert idx.shape == (200, m)
    for row in idx:
        assert len(set(row.tolist())) == m
    assert idx.min() >= 0 and idx.max() < M


def test_without_replacement_is_uniform_over_positions():
    mu = DiscreteUniform(np.arange(5, dtype=float)[:, None], replace=False)
    idx = draw_batch(mu, 3, 1, 0, 200_000)
    for col in range(3):
        freq = np.bincount(idx[:, col], minlength=5) / len(idx)
        np.testing.assert_allclose(freq, 0.2, atol=0.005)


def test_noisy_linear_appends_noise_column():
    mu = NoisyLinear(GaussianStandard(2), "normal", 0.5)
    pts = mu.to_points(draw_batch(mu, 3, 0, 0, 50_000))
    assert pts.shape == (50_000, 3, 3)
    assert abs(pts[..., 2].std() - 0.5) < 0.01


def test_subgaussian_tags():
    flag, R = is_subgaussian(GaussianStandard(3))
    assert flag and R == pytest.approx(math.sqrt(2))
    flag, R = is_subgaussian(ProductScalar(2, "cauchy", h=np.tanh, h_bound=1.0))
    assert flag and R == pytest.approx(1 / math.sqrt(math.log(2)))
    assert is_subgaussian(ProductScalar(2, "cauchy")) == (False, None)
    assert is_subgaussian(ProductScalar(2, "laplace"))[0] is False


def test_gaussian_scale_dominates_normal_tail():
    # P(|Z| > t) <= 2 exp(-t^2 / R^2) with R = sqrt(2)
    t = np.linspace(0, 8, 200)
    assert np.all(2 * stats.norm.sf(t) <= 2 * np.exp(-t**2 / 2) + 1e-15)


def test_bounded_scale_dominates_constant_tail():
    B = 3.0
    R = is_subgaussian(ProductScalar(1, "uniform", h=lambda x: B * x, h_bound=B))[1]
    t = np.linspace(0, B, 50, endpoint=False)
    # P(|h| > t) <= 1 for t < B must be dominated by 2 exp(-t^2 / R^2)
    assert np.all(2 * np.exp(-t**2 / R**2) >= 1 - 1e-12)
