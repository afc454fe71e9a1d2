import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sublsq import (
    DimensionError,
    EvaluationError,
    GaussianStandard,
    Problem,
    RankDeficiencyError,
    SubProblem,
    build_subproblem,
    full_least_squares,
    residue_norm,
    smallest_gram_eigenvalue,
    solve_subproblem,
)
from sublsq.core import householder_qr_batch, solve_batch, triangular_extreme_singular_values
from sublsq.esp import Site, build_esp_problem, EspGrid
from sublsq.sampling import ProductScalar


def line_problem():
    basis = [lambda p: p[:, 0], lambda p: np.ones(len(p))]
    return Problem(basis, lambda p: 2 * p[:, 0] + 1, ProductScalar(1, "uniform"))


def sub(G, F):
    return SubProblem(np.asarray(G, float), np.asarray(F, float), 0)


def test_build_subproblem_rows_follow_points():
    s = build_subproblem(line_problem(), np.array([[2.0], [3.0]]))
    np.testing.assert_array_equal(s.gamma, [[2, 1], [3, 1]])
    np.testing.assert_array_equal(s.fvec, [5, 7])


def test_build_subproblem_esp_entry():
    site = Site("O", [0, 0, 0], 0)
    grid = EspGrid(np.array([[2.0, 0, 0], [0, 3.0, 0]]), np.zeros(2))
    problem = build_esp_problem([site], grid)
    s = build_subproblem(problem, grid.points[:1])
    assert s.gamma[0, 0] == 0.5


def test_duplicate_points_are_rank_deficient():
    s = build_subproblem(line_problem(), np.array([[0.3], [0.3]]))
    assert smallest_gram_eigenvalue(s) <= 1e-12


def test_nonfinite_evaluation_names_point_and_function():
    basis = [lambda p: np.array([math.inf if x == 0 else 1.0 / x for x in p[:, 0]])]
    problem = Problem(basis, lambda p: p[:, 0], GaussianStandard(1))
    with pytest.raises(EvaluationError) as info:
        build_subproblem(problem, np.array([[1.0], [0.0]]))
    assert info.value.function_index == 0
    np.testing.assert_array_equal(info.value.point, [0.0])


def test_solve_identity():
    sol = solve_subproblem(sub(np.eye(2), [3, -1]))
    np.testing.assert_allclose(sol.beta, [3, -1])
    assert sol.well_posed


def test_solve_consistent_overdetermined():
    sol = solve_subproblem(sub([[1, 0], [0, 1], [1, 1]], [1, 1, 2]))
    np.testing.assert_allclose(sol.beta, [1, 1], atol=1e-15)
    assert sol.residual_norm2 == pytest.approx(0, abs=1e-15)


def test_solve_normal_equations_case():
    sol = solve_subproblem(sub([[1, 0], [0, 1], [1, 1]], [1, 0, 0]))
    np.testing.assert_allclose(sol.beta, [2 / 3, -1 / 3], rtol=1e-14)


def test_solve_rejects_underdetermined():
    with pytest.raises(DimensionError):
        solve_subproblem(sub([[1.0, 2.0]], [1.0]))


def test_solve_below_floor_is_not_well_posed():
    sol = solve_subproblem(sub([[1, 1], [1, 1]], [1, 2]))
    assert not sol.well_posed
    assert sol.beta is None


def test_smallest_gram_eigenvalue_examples():
    assert smallest_gram_eigenvalue(sub([[3, 0], [0, 2]], [0, 0])) == pytest.approx(4.0, rel=1e-15)
    assert smallest_gram_eigenvalue(sub([[1, 2], [1, 2]], [0, 0])) == pytest.approx(0.0, abs=1e-12)


def test_s1_matches_eigensolve_on_gaussian_draws():
    rng = np.random.default_rng(4)
    for _ in range(20):
        G = rng.standard_normal((6, 4))
        s1 = smallest_gram_eigenvalue(sub(G, np.zeros(6)))
        assert s1 == pytest.approx(np.linalg.eigvalsh(G.T @ G)[0], rel=1e-9)


def test_full_least_squares_exact_fit():
    fit = full_least_squares(np.array([[1.0, 0], [0, 1], [1, 1]]), np.array([1.0, 1, 2]))
    np.testing.assert_allclose(fit.alpha, [1, 1], atol=1e-15)
    assert fit.rmsd == pytest.approx(0, abs=1e-15)


def test_full_least_squares_rank_deficient():
    with pytest.raises(RankDeficiencyError) as info:
        full_least_squares(np.array([[1.0, 2], [2, 4], [3, 6]]), np.array([1.0, 2, 3]))
    assert info.value.smallest_eigenvalue >= 0


def test_mean_signed_error_skips_small_targets():
    A = np.array([[1.0], [1.0], [1.0]])
    fit = full_least_squares(A, np.array([1.0, 3.0, 0.0]))
    # alpha = 4/3; relative errors (1/3)/1 and (-5/3)/3 averaged over the two kept points
    assert fit.mean_signed_error == pytest.approx(100 * (1 / 3 - 5 / 9) / 2)


def test_residue_norm_discrete():
    A = np.array([[1.0], [1.0], [1.0]])
    problem = Problem.from_matrix(A, np.array([1.0, 2.0, 0.0]))
    rep = residue_norm(problem, [1.0], p=2)
    assert rep.norm_value == pytest.approx(math.sqrt(2 / 3), rel=1e-15)
    assert rep.exact
    assert residue_norm(problem, [1.0], p=math.inf).norm_value == 1.0


def test_residue_norm_zero_in_span():
    assert residue_norm(line_problem(), [2.0, 1.0], p=2, sample_budget=1000).norm_value == pytest.approx(0, abs=1e-14)


def test_residue_norm_continuous_inf_is_lower_bound():
    problem = Problem([lambda p: p[:, 0]], lambda p: p[:, 0] ** 2, ProductScalar(1, "uniform"))
    rep = residue_norm(problem, [0.0], p=math.inf, sample_budget=10_000)
    assert rep.lower_bound and not rep.exact
    assert 0.99 < rep.norm_value <= 1.0
    rep2 = residue_norm(problem, [0.0], p=2, sample_budget=200_000)
    # ||x^2||_2 under U(-1, 1) is 1/sqrt(5)
    assert abs(rep2.norm_value - 1 / math.sqrt(5)) < 4 * rep2.std_error


small_mats = arrays(np.float64, st.tuples(st.integers(2, 7), st.integers(1, 4)),
                    elements=st.floats(-10, 10, allow_subnormal=False))


@settings(max_examples=200, deadline=None)
@given(G=small_mats, data=st.data())
def test_projection_identity(G, data):
    m, n = G.shape
    if m < n:
        G = G.T
        m, n = n, m
    s = sub(G, np.zeros(m))
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] < 1e-6 * max(sv[0], 1e-300) or sv[-1] < 1e-8:
        return
    a = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n)))
    sol = solve_subproblem(sub(G, G @ a))
    kappa = sv[0] / sv[-1]
    assert np.linalg.norm(sol.beta - a) <= 1e-8 * kappa * max(np.linalg.norm(a), 1e-300) + 1e-300
    assert s.s1 == pytest.approx(sv[-1] ** 2, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(3, 8), n=st.integers(1, 3), c=st.floats(0.1, 10))
def test_solution_invariances(seed, m, n, c):
    rng = np.random.default_rng(seed)
    G, F = rng.standard_normal((m, n)), rng.standard_normal(m)
    beta = solve_subproblem(sub(G, F)).beta
    perm = rng.permutation(m)
    np.testing.assert_allclose(solve_subproblem(sub(G[perm], F[perm])).beta, beta, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(solve_subproblem(sub(G, c * F)).beta, c * beta, rtol=1e-10, atol=1e-12)
    Gs = G.copy()
    Gs[:, 0] *= c
    scaled = solve_subproblem(sub(Gs, F)).beta
    np.testing.assert_allclose(scaled[0], beta[0] / c, rtol=1e-10, atol=1e-12)
    # normal-equation residual
    r = G.T @ (G @ beta - F)
    assert np.linalg.norm(r) <= 1e-8 * (1 + np.linalg.norm(G.T @ F))


def test_batch_kernel_matches_lapack():
    rng = np.random.default_rng(11)
    for m, n in [(3, 1), (4, 2), (6, 3), (8, 4)]:
        G, F = rng.standard_normal((500, m, n)), rng.standard_normal((500, m))
        res = solve_batch(G, F, 0.0)
        ref = np.array([np.linalg.lstsq(g, f, rcond=None)[0] for g, f in zip(G, F)])
        np.testing.assert_allclose(res.beta, ref, rtol=1e-9, atol=1e-10)
        sv = np.linalg.svd(G, compute_uv=False)
        np.testing.assert_allclose(res.s1, sv[:, -1] ** 2, rtol=1e-9)
        R, _ = householder_qr_batch(G, F)
        lo, hi = triangular_extreme_singular_values(R[:, :n, :n])
        np.testing.assert_allclose(hi, sv[:, 0], rtol=1e-10)


def test_batch_rejects_at_threshold_strictly():
    G = np.array([[[2.0, 0], [0, 1]], [[3.0, 0], [0, 2]]])
    res = solve_batch(G, np.ones((2, 2)), sigma=1.0)
    # s1 = 1 is not strictly above sigma = 1
    assert list(res.accepted) == [False, True]
    assert np.isnan(res.beta[0]).all()
