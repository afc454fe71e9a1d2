"""Least-squares kernel: subproblem construction, stable solves, Gram eigenvalues, residues.

Everything here is deterministic.  Single-draw functions (``build_subproblem``,
``solve_subproblem``, ``smallest_gram_eigenvalue``) go through LAPACK; the
``solve_batch`` kernel runs a Householder QR vectorized over a stack of small
systems and is what the Monte Carlo estimator calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, EvaluationError, RankDeficiencyError
from .sampling import DiscreteUniform, GaussianStandard, NoisyLinear, SamplingMeasure, draw_batch

# s1 floor relative to the largest Gram eigenvalue, used when no threshold is requested
REL_FLOOR = 1e-12

BasisFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Problem:
    """Approximate ``target`` by a combination of ``basis`` functions under ``measure``.

    Basis functions and target take an array of points of shape ``(k, dim)``
    and return ``k`` values.
    """

    basis: Sequence[BasisFunction]
    target: BasisFunction
    measure: SamplingMeasure
    name: str = ""

    def __post_init__(self):
        if len(self.basis) < 1:
            raise DimensionError("a problem needs at least one basis function")

    @property
    def n(self) -> int:
        return len(self.basis)

    @classmethod
    def from_matrix(cls, A, b, replace=True, name="matrix"):
        """Discrete problem on Omega = {0..M-1}: row i of ``A`` holds gamma_j(i), ``b[i]`` holds f(i)."""
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise DimensionError(f"incompatible shapes A{A.shape}, b{b.shape}")
        measure = DiscreteUniform(np.arange(A.shape[0], dtype=float)[:, None], replace=replace)
        basis = [lambda pts, j=j: A[pts[:, 0].astype(np.int64), j] for j in range(A.shape[1])]
        target = lambda pts: b[pts[:, 0].astype(np.int64)]  # noqa: E731
        problem = cls(basis, target, measure, name)
        # avoid re-evaluating through the index lambdas
        problem.__dict__["matrix"] = A
        problem.__dict__["rhs"] = b
        return problem

    def evaluate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Design rows and target values at ``points`` (shape ``(k, dim)``)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        cols = []
        for j, g in enumerate(self.basis):
            col = np.asarray(g(pts), dtype=float).reshape(len(pts))
            _check_finite(col, pts, j)
            cols.append(col)
        f = np.asarray(self.target(pts), dtype=float).reshape(len(pts))
        _check_finite(f, pts, "target")
        return np.column_stack(cols), f

    @property
    def discrete(self) -> bool:
        return isinstance(self.measure, DiscreteUniform)

    @cached_property
    def matrix(self) -> np.ndarray:
        """The ``M x n`` design matrix on the discrete support."""
        A, b = self.evaluate(self._support())
        self.__dict__["rhs"] = b
        return A

    @cached_property
    def rhs(self) -> np.ndarray:
        return self.evaluate(self._support())[1]

    def _support(self):
        if not self.discrete:
            raise DimensionError("matrix form only exists for discrete measures")
        return self.measure.points


def _check_finite(values, pts, which):
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argmax(bad))
        label = "target" if which == "target" else f"basis function {which}"
        raise EvaluationError(
            f"{label} is not finite at point {pts[i].tolist()}", point=pts[i], function_index=which
        )


@dataclass(frozen=True, eq=False)
class SubProblem:
    gamma: np.ndarray
    fvec: np.ndarray
    draw_index: int = 0

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @property
    def n(self) -> int:
        return self.gamma.shape[1]

    @cached_property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.gamma, compute_uv=False)

    @property
    def s1(self) -> float:
        return smallest_gram_eigenvalue(self)


@dataclass(frozen=True, eq=False)
class Solution:
    beta: Optional[np.ndarray]
    residual_norm2: Optional[float]
    well_posed: bool
    s1: float


@dataclass(frozen=True)
class ResidueReport:
    coeffs: np.ndarray = field(repr=False)
    p: float
    norm_value: float
    std_error: float = 0.0
    exact: bool = True
    lower_bound: bool = False


@dataclass(frozen=True)
class LeastSquaresFit:
    alpha: np.ndarray
    rmsd: float
    mean_signed_error: float  # percent
    residual: np.ndarray = field(repr=False)
    s1: float = math.nan


def build_subproblem(problem: Problem, points, draw_index: int = 0) -> SubProblem:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 1:
        raise DimensionError("a subproblem needs at least one point")
    gamma, f = problem.evaluate(pts)
    return SubProblem(gamma, f, draw_index)


def smallest_gram_eigenvalue(sub: SubProblem) -> float:
    """Smallest eigenvalue of Gamma^T Gamma, as the squared smallest singular value of Gamma."""
    sv = sub.singular_values
    if sub.m < sub.n:
        return 0.0
    return float(sv[-1] ** 2)


def solve_subproblem(sub: SubProblem, s1_floor: Optional[float] = None) -> Solution:
    """Least-squares solve of one draw through a Householder QR.

    ``s1_floor=None`` uses ``REL_FLOOR`` times the largest Gram eigenvalue.
    """
    if sub.m < sub.n:
        raise DimensionError(f"underdetermined subproblem: m={sub.m} < n={sub.n}")
    s1 = smallest_gram_eigenvalue(sub)
    floor = REL_FLOOR * float(sub.singular_values[0] ** 2) if s1_floor is None else s1_floor
    if not s1 > floor:
        return Solution(None, None, False, s1)
    q, r = np.linalg.qr(sub.gamma)
    beta = solve_triangular(r, q.T @ sub.fvec)
    resid = float(np.linalg.norm(sub.fvec - sub.gamma @ beta))
    return Solution(beta, resid, True, s1)


@dataclass(frozen=True, eq=False)
class BatchSolution:
    beta: np.ndarray  # (B, n), NaN rows where rejected
    s1: np.ndarray
    smax2: np.ndarray
    accepted: np.ndarray
    residual_norm2: np.ndarray


def householder_qr_batch(G: np.ndarray, F: np.ndarray):
    """Householder QR of a stack of ``(m, n)`` matrices, applied to right-hand sides.

    Returns the ``(B, n, n)`` triangular factors and ``Q^T F`` of shape ``(B, m)``.
    """
    A = np.array(G, dtype=float, copy=True)
    y = np.array(F, dtype=float, copy=True)
    _, m, n = A.shape
    for j in range(min(n, m)):
        x = A[:, j:, j]
        norm = np.sqrt(np.einsum("bi,bi->b", x, x))
        alpha = np.where(x[:, 0] >= 0, -norm, norm)
        v = x.copy()
        v[:, 0] -= alpha
        vv = np.einsum("bi,bi->b", v, v)
        tau = np.divide(2.0, vv, out=np.zeros_like(vv), where=vv > 0)
        sub = A[:, j:, j:]
        w = np.einsum("bi,bik->bk", v, sub) * tau[:, None]
        sub -= v[:, :, None] * w[:, None, :]
        wy = np.einsum("bi,bi->b", v, y[:, j:]) * tau
        y[:, j:] -= v * wy[:, None]
    return np.triu(A[:, :n, :n]), y


def triangular_extreme_singular_values(R: np.ndarray):
    """Smallest and largest singular values of a stack of square upper-triangular factors."""
    n = R.shape[-1]
    if n == 1:
        s = np.abs(R[:, 0, 0])
        return s, s
    if n == 2:
        f, g, h = R[:, 0, 0], R[:, 0, 1], R[:, 1, 1]
        t = f * f + g * g + h * h
        # t^2 - 4 f^2 h^2 factored to avoid cancellation
        disc = np.sqrt(((f - h) ** 2 + g * g) * ((f + h) ** 2 + g * g))
        smax = np.sqrt(0.5 * (t + disc))
        smin = np.divide(np.abs(f * h), smax, out=np.zeros_like(smax), where=smax > 0)
        return smin, smax
    sv = np.linalg.svd(R, compute_uv=False)
    return sv[:, -1], sv[:, 0]


def solve_batch(G: np.ndarray, F: np.ndarray, sigma: float = 0.0) -> BatchSolution:
    """Solve a stack of least-squares subproblems, rejecting draws with s1 <= threshold.

    The threshold is ``sigma`` when positive, else ``REL_FLOOR`` times the
    largest Gram eigenvalue of each draw.
    """
    B, m, n = G.shape
    if m < n:
        raise DimensionError(f"underdetermined subproblems: m={m} < n={n}")
    R, y = householder_qr_batch(G, F)
    smin, smax = triangular_extreme_singular_values(R)
    s1, smax2 = smin * smin, smax * smax
    floor = sigma if sigma > 0 else REL_FLOOR * smax2
    accepted = s1 > floor
    beta = np.full((B, n), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n - 1, -1, -1):
            acc = y[:, i] - np.einsum("bk,bk->b", R[:, i, i + 1:], beta[:, i + 1:])
            beta[:, i] = acc / R[:, i, i]
    beta[~accepted] = np.nan
    resid = np.sqrt(np.einsum("bi,bi->b", y[:, n:], y[:, n:]))
    return BatchSolution(beta, s1, smax2, accepted, resid)


def full_least_squares(problem, b=None, *, mse_floor: float = 1e-10) -> LeastSquaresFit:
    """Exact least squares over a discrete support.

    Accepts a discrete ``Problem`` or a matrix ``A`` together with ``b``.
    The mean signed error averages ``(A alpha - b)_i / b_i`` over points with
    ``|b_i| > mse_floor`` and is returned in percent.
    """
    if isinstance(problem, Problem):
        A, rhs = problem.matrix, problem.rhs
    else:
        A, rhs = np.asarray(problem, dtype=float), np.asarray(b, dtype=float)
    M, n = A.shape
    if M < n:
        raise DimensionError(f"M={M} points for n={n} unknowns")
    sv = np.linalg.svd(A, compute_uv=False)
    s1, smax2 = float(sv[-1] ** 2), float(sv[0] ** 2)
    if not s1 > 1e-12 * smax2:
        raise RankDeficiencyError(
            f"normal matrix is numerically singular (smallest eigenvalue {s1:.3e}, largest {smax2:.3e})",
            smallest_eigenvalue=s1,
        )
    q, r = np.linalg.qr(A)
    alpha = solve_triangular(r, q.T @ rhs)
    resid = A @ alpha - rhs
    rmsd = math.sqrt(float(resid @ resid) / M)
    keep = np.abs(rhs) > mse_floor
    mse = 100.0 * float(np.mean(resid[keep] / rhs[keep])) if keep.any() else math.nan
    return LeastSquaresFit(alpha, rmsd, mse, resid, s1)


def residue_norm(
    problem: Problem, a, p: float = 2.0, sample_budget: int = 100_000, seed: int = 0
) -> ResidueReport:
    """L^p norm of f - sum_j a_j gamma_j under the problem's measure.

    Exact on discrete supports; otherwise a Monte Carlo estimate from
    ``sample_budget`` points (for p = inf, the sample maximum, flagged as a
    lower bound).
    """
    a = np.asarray(a, dtype=float)
    if not (p >= 1):
        raise DimensionError(f"norm order must be >= 1, got {p}")
    if problem.discrete:
        rho = problem.rhs - problem.matrix @ a
        if math.isinf(p):
            return ResidueReport(a, p, float(np.max(np.abs(rho))))
        return ResidueReport(a, p, float(np.mean(np.abs(rho) ** p) ** (1.0 / p)))

    if sample_budget < 1:
        raise DimensionError("sample_budget must be >= 1")
    raw = draw_batch(problem.measure, 1, seed, 0, sample_budget)
    pts = problem.measure.to_points(raw).reshape(sample_budget, -1)
    G, f = problem.evaluate(pts)
    rho = np.abs(f - G @ a)
    if math.isinf(p):
        return ResidueReport(a, p, float(rho.max()), exact=False, lower_bound=True)
    vals = rho ** p
    mean = float(vals.mean())
    se_mean = float(vals.std(ddof=1) / math.sqrt(sample_budget)) if sample_budget > 1 else math.inf
    norm = mean ** (1.0 / p)
    se = (norm / (p * mean)) * se_mean if mean > 0 else 0.0
    return ResidueReport(a, p, norm, se, exact=False)


def gaussian_linear_problem(n: int, coeffs=None, noise_scale: float = 1.0, noise_law: str = "normal") -> Problem:
    """Wishart setting: gamma_j(x) = x_j with x standard Gaussian, f = coeffs . x + noise.

    With ``noise_scale = 0`` the target lies in the basis span.
    """
    a = np.ones(n) if coeffs is None else np.asarray(coeffs, dtype=float).reshape(n)
    basis = [lambda pts, j=j: pts[:, j] for j in range(n)]
    if noise_scale == 0:
        return Problem(basis, lambda pts: pts[:, :n] @ a, GaussianStandard(n), "gaussian-linear")
    measure = NoisyLinear(GaussianStandard(n), noise_law, noise_scale)
    return Problem(basis, lambda pts: pts[:, :n] @ a + pts[:, n], measure, "gaussian-linear")
