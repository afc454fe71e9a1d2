import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from conftest import SIX_B, SIX_EXPECTED, SIX_T, enumerate_expected_beta, six_point_problem
from sublsq import (
    ConfigurationError,
    EstimatorConfig,
    GaussianStandard,
    Problem,
    RunResult,
    ThresholdTooHighError,
    confidence_region,
    empirical_K_q,
    gaussian_linear_problem,
    run_estimator,
)
from sublsq.core import full_least_squares, residue_norm
from sublsq.esp import build_esp_problem, generate_shell_grid, synthesize_esp, water_model, water_sites
from sublsq.estimator import consistency_bound, default_checkpoints, gaussian_tail_quantile, parse_retention, variance_bound


def mp_quantile(n, eta):
    mpmath.mp.dps = 40
    return float(mpmath.sqrt(2) * mpmath.erfinv(1 - mpmath.mpf(eta) / n))


def test_enumeration_oracle_is_frozen():
    expected, count = enumerate_expected_beta(SIX_T, SIX_B, 3)
    assert count == 210
    assert expected == SIX_EXPECTED


def test_zero_residue_discrete_and_continuous():
    A = np.column_stack([np.ones(6), SIX_T])
    a = np.array([0.5, -2.0])
    problem = Problem.from_matrix(A, A @ a)
    r = run_estimator(problem, EstimatorConfig(m=3, n_draws=20_000, seed=1))
    np.testing.assert_allclose(r.beta_bar, a, atol=1e-12)
    assert r.trace_cov <= 1e-16 * (a @ a)

    r = run_estimator(gaussian_linear_problem(3, [1.0, 2.0, 3.0], noise_scale=0), EstimatorConfig(m=5, n_draws=10_000))
    np.testing.assert_allclose(r.beta_bar, [1, 2, 3], rtol=1e-11)
    assert r.trace_cov <= 1e-16 * 14


def test_singular_draws_are_rejected_and_counted(six_problem):
    r = run_estimator(six_problem, EstimatorConfig(m=3, n_draws=200_000, seed=3))
    # 6 of the 216 ordered draws repeat one point and are singular
    assert abs(r.acceptance_rate - 210 / 216) < 4 * math.sqrt(6 / 216 * 210 / 216 / r.attempted)
    assert r.s1.min() > 0.02


def test_oracle_mean_small_run(six_problem):
    r = run_estimator(six_problem, EstimatorConfig(m=3, n_draws=200_000, seed=5, eta=0.01))
    assert confidence_region(r).contains([float(x) for x in SIX_EXPECTED])
    # the subproblem mean is biased away from the full least-squares solution
    alpha = full_least_squares(six_problem).alpha
    assert not confidence_region(r).contains(alpha)


def test_tail_quantile_examples():
    assert gaussian_tail_quantile(1, 0.05) == pytest.approx(1.959963984540054, abs=1e-12)
    assert gaussian_tail_quantile(1, 0.05) == pytest.approx(mp_quantile(1, 0.05), abs=1e-12)
    assert gaussian_tail_quantile(2, 0.05) == pytest.approx(mp_quantile(2, 0.05), abs=1e-12)
    assert gaussian_tail_quantile(1, 1.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 10_000), eta=st.floats(1e-6, 0.2))
def test_tail_quantile_equation_and_bound(n, eta):
    x = gaussian_tail_quantile(n, eta)
    assert abs(ndtr(-x) - eta / (2 * n)) <= 1e-12
    assert x * x <= 2 * math.log(n * math.sqrt(2) / (eta * math.sqrt(math.pi)))


def fake_result(var, N, eta=0.05):
    n = len(var)
    return RunResult(np.zeros(n), np.diag(var), N, N, n, 0.0, eta, 0, "test", s1=np.ones(N))


def test_confidence_halfwidths_example():
    region = confidence_region(fake_result([1.0, 1.0], 10_000))
    np.testing.assert_allclose(region.halfwidths, mp_quantile(2, 0.05) / 100, rtol=1e-12)
    assert region.halfwidths[0] == pytest.approx(0.022414, abs=1e-6)
    assert region.diameter == pytest.approx(2 * mp_quantile(2, 0.05) * math.sqrt(2 / 10_000), rel=1e-12)


def test_zero_trace_gives_point_region():
    region = confidence_region(fake_result([0.0, 0.0, 0.0], 50))
    assert region.diameter == 0 and np.all(region.halfwidths == 0)


def test_K_q_constant_stream():
    est = empirical_K_q(np.full(100, 4.0), 2)
    assert est.value == pytest.approx(0.25)
    assert est.std_error == pytest.approx(0.0, abs=1e-15)


def test_K_q_sigma_trivial_bound(six_problem):
    r = run_estimator(six_problem, EstimatorConfig(m=3, n_draws=20_000, sigma=0.1, q_values=(1, 2, 4)))
    for est in r.k_q_sigma_hat.values():
        assert est.sigma == 0.1
        assert est.value <= 10
        assert est.within_trivial_bound


def test_K_q_against_jackknife_oracle():
    s1 = np.random.default_rng(0).uniform(0.5, 2.0, 200)
    est = empirical_K_q(s1, 2)
    loo = np.array([np.mean(1 / np.delete(s1, i)) for i in range(len(s1))])
    se = math.sqrt((len(s1) - 1) / len(s1) * np.sum((loo - loo.mean()) ** 2))
    assert est.value == pytest.approx(np.mean(1 / s1))
    assert est.std_error == pytest.approx(se, rel=1e-10)


def bits(r):
    return (r.beta_bar.tobytes(), r.cov.tobytes(), r.attempted, r.s1.tobytes(), r.running_average[1].tobytes())


@pytest.mark.parametrize("retain", ["none", "reservoir:100"])
def test_deterministic_across_threads(six_problem, retain):
    cfg = EstimatorConfig(m=3, n_draws=30_000, sigma=0.3, seed=42, retain=retain)
    runs = [run_estimator(six_problem, cfg, threads=t) for t in (1, 2, 5)]
    for r in runs[1:]:
        assert bits(r) == bits(runs[0])
        if retain != "none":
            np.testing.assert_array_equal(r.samples, runs[0].samples)
            np.testing.assert_array_equal(r.sample_indices, runs[0].sample_indices)


def test_threshold_monotonicity(six_problem):
    rates = [run_estimator(six_problem, EstimatorConfig(m=3, n_draws=5_000, sigma=s, seed=8)).acceptance_rate
             for s in (0.0, 0.1, 0.3, 0.6, 1.0)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_threshold_too_high_reports_rate(six_problem):
    with pytest.raises(ThresholdTooHighError) as info:
        run_estimator(six_problem, EstimatorConfig(m=3, n_draws=10, sigma=1e6, max_attempts=500))
    assert info.value.attempted == 500
    assert info.value.acceptance_rate == 0.0


def test_config_validation(six_problem):
    with pytest.raises(ConfigurationError):
        EstimatorConfig(m=3, n_draws=1)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(m=3, n_draws=10, max_attempts=5)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(m=3, n_draws=10, retain="reservoir:0")
    with pytest.raises(ConfigurationError):
        run_estimator(six_problem, EstimatorConfig(m=1, n_draws=10))
    assert parse_retention("reservoir:7") == ("reservoir", 7)


def test_retention_policies(six_problem):
    base = dict(m=3, n_draws=10_000, seed=2)
    full = run_estimator(six_problem, EstimatorConfig(retain="all", **base))
    res = run_estimator(six_problem, EstimatorConfig(retain="reservoir:50", **base))
    none = run_estimator(six_problem, EstimatorConfig(**base))
    assert none.samples is None
    assert full.samples.shape == (10_000, 2)
    np.testing.assert_allclose(full.samples.mean(axis=0), full.beta_bar, rtol=1e-12)
    assert res.samples.shape == (50, 2)
    assert np.all(np.diff(res.sample_indices) > 0)
    pos = np.searchsorted(full.sample_indices, res.sample_indices)
    np.testing.assert_array_equal(full.samples[pos], res.samples)


def test_running_average_matches_prefix_means(six_problem):
    r = run_estimator(six_problem, EstimatorConfig(m=3, n_draws=5_000, retain="all", seed=6))
    ck, values = r.running_average
    np.testing.assert_array_equal(ck, default_checkpoints(5_000))
    np.testing.assert_allclose(values, np.cumsum(r.samples, axis=0)[ck - 1] / ck[:, None], rtol=1e-12)
    np.testing.assert_allclose(values[-1], r.beta_bar, rtol=1e-12)
    assert len(ck) <= 200


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), m=st.integers(3, 6), sigma=st.sampled_from([0.0, 0.1, 0.5]))
def test_covariance_is_psd(seed, m, sigma):
    r = run_estimator(six_point_problem(), EstimatorConfig(m=m, n_draws=500, sigma=sigma, seed=seed))
    assert np.allclose(r.cov, r.cov.T)
    assert np.linalg.eigvalsh(r.cov)[0] >= -1e-10 * r.trace_cov
    assert 0 < r.acceptance_rate <= 1
    assert r.conf_diameter >= 0


def test_coverage_of_oracle():
    problem = six_point_problem()
    truth = [float(x) for x in SIX_EXPECTED]
    hits = 0
    for seed in range(500):
        r = run_estimator(problem, EstimatorConfig(m=3, n_draws=2_000, seed=1000 + seed, eta=0.05, q_values=()))
        hits += confidence_region(r).contains(truth)
    assert hits >= 0.93 * 500


def test_law_of_large_numbers_in_m():
    # f = x . a + x_1^3 under a standard Gaussian: the L2 projection is a + 3 e_1
    n = 3
    a = np.array([1.0, -1.0, 0.5])
    problem = Problem([lambda p, j=j: p[:, j] for j in range(n)], lambda p: p @ a + p[:, 0] ** 3, GaussianStandard(n))
    limit = a + np.array([3.0, 0, 0])
    errs, ses = [], []
    for m in (n + 2, 4 * n, 16 * n):
        r = run_estimator(problem, EstimatorConfig(m=m, n_draws=100_000, seed=21))
        errs.append(np.linalg.norm(r.beta_bar - limit))
        ses.append(math.sqrt(r.trace_cov / r.accepted))
    inversions = [i for i in range(2) if errs[i + 1] > errs[i]]
    assert len(inversions) <= 1
    for i in inversions:
        assert errs[i + 1] - errs[i] <= 2 * math.hypot(ses[i], ses[i + 1])


def test_variance_bound_formula():
    assert variance_bound(2, 3, 0.5, 2.0) == 2 * 9 * 4 / 0.5
    with pytest.raises(ConfigurationError):
        variance_bound(2, 3, 0.0, 1.0)


def test_consistency_with_full_least_squares():
    sites = water_sites()
    grid = synthesize_esp(sites, water_model(1.0), generate_shell_grid(sites, count=500, seed=3))
    problem = build_esp_problem(sites, grid)
    alpha = full_least_squares(problem).alpha
    rho = residue_norm(problem, alpha, math.inf).norm_value
    for m, sigma in [(2, 0.0), (4, 1e-4), (6, 1e-3)]:
        r = run_estimator(problem, EstimatorConfig(m=m, n_draws=20_000, sigma=sigma, seed=m))
        k1 = r.k_q_sigma_hat[1.0].value
        bound = consistency_bound(2, m, k1, r.acceptance_rate, rho)
        assert np.linalg.norm(r.beta_bar - alpha) <= bound
        # the stated form divides by the acceptance rate and is weaker
        assert bound <= math.sqrt(2) * m * math.sqrt(k1) * rho / r.acceptance_rate
