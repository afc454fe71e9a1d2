"""Statistical conformance suites for the smallest Gram eigenvalue s1.

Each check yields a :class:`Verdict`; a suite passes when all of its
verdicts do.  Tolerances are expressed in binomial standard errors computed
at the bound value, i.e. under the least favourable law the bound allows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaln

from . import bounds
from .errors import ConfigurationError
from .estimator import empirical_K_q
from .sampling import BLOCK_SIZE, GaussianStandard, ProductScalar, SamplingMeasure, draw_batch


@dataclass(frozen=True)
class Verdict:
    suite: str
    check: str
    n: int
    m: int
    statistic: float
    limit: float
    passed: bool
    detail: str = ""


def sample_s1(measure: SamplingMeasure, m: int, draws: int, seed: int = 0, chunk: int = 64 * BLOCK_SIZE) -> np.ndarray:
    """s1 of ``draws`` independent m x dim matrices whose rows are points of ``measure``."""
    out = np.empty(draws)
    for start in range(0, draws, chunk):
        count = min(chunk, draws - start)
        G = measure.to_points(draw_batch(measure, m, seed, start, count))
        sv = np.linalg.svd(G, compute_uv=False)
        out[start:start + count] = sv[:, -1] ** 2
    return out


def wishart_s1(n: int, m: int, draws: int, seed: int = 0) -> np.ndarray:
    return sample_s1(GaussianStandard(n), m, draws, seed)


def ecdf(samples: np.ndarray, points) -> np.ndarray:
    s = np.sort(samples)
    return np.searchsorted(s, np.asarray(points, dtype=float), side="right") / len(s)


def binomial_se(p, N):
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    return np.sqrt(p * (1.0 - p) / N)


def tail_grid(n: int, m: int, points: int = 20, decades: float = 3.0) -> np.ndarray:
    """Log grid ending where the Wishart tail bound reaches 1."""
    k = m - n + 1
    top = k * k / (math.e**2 * m)
    return np.geomspace(top * 10.0**-decades, top, points)


def check_wishart_tail(s1: np.ndarray, n: int, m: int, eps=None, n_se: float = 3.0) -> Verdict:
    eps = tail_grid(n, m) if eps is None else np.asarray(eps, dtype=float)
    N = len(s1)
    emp = ecdf(s1, eps)
    bound = bounds.wishart_tail_bound(n, m, eps)
    excess = (emp - bound) / np.maximum(binomial_se(bound, N), 1.0 / N)
    worst = int(np.argmax(excess))
    return Verdict(
        "wishart", "tail", n, m, float(excess[worst]), n_se, bool(np.all(excess <= n_se)),
        f"{len(eps)} eps in [{eps[0]:.3g}, {eps[-1]:.3g}]; worst at eps={eps[worst]:.3g}: "
        f"P_hat={emp[worst]:.4g} bound={bound[worst]:.4g}",
    )


def _envelope_mass(n, m, lo, hi):
    """Integrals over [lo, hi] of the lower and upper density envelopes."""
    k = m - n + 1
    a = k / 2.0
    logL = bounds.wishart_log_L(n, m)

    def mass(rate):
        # int L x^{a-1} e^{-rate x} dx = L Gamma(a) rate^{-a} [P(a, rate hi) - P(a, rate lo)]
        scale = math.exp(logL + gammaln(a) - a * math.log(rate))
        return scale * (gammainc(a, rate * hi) - gammainc(a, rate * lo))

    return mass(n / 2.0), mass(0.5)


def check_density_sandwich(s1: np.ndarray, n: int, m: int, bins: int = 40, n_se: float = 3.0) -> Verdict:
    N = len(s1)
    top = float(np.quantile(s1, 0.995))
    edges = np.linspace(0.0, top, bins + 1)
    counts, _ = np.histogram(s1, bins=edges)
    p_hat = counts / N
    low, high = _envelope_mass(n, m, edges[:-1], edges[1:])
    floor = 1.0 / N
    below = (low - p_hat) / np.maximum(binomial_se(low, N), floor)
    above = (p_hat - high) / np.maximum(binomial_se(high, N), floor)
    z = np.maximum(below, above)
    worst = int(np.argmax(z))
    return Verdict(
        "wishart", "density", n, m, float(z[worst]), n_se, bool(np.all(z <= n_se)),
        f"{bins} bins on [0, {top:.4g}]; worst bin {worst}: mass {p_hat[worst]:.4g} "
        f"in [{low[worst]:.4g}, {high[worst]:.4g}]",
    )


def check_K_q(s1: np.ndarray, n: int, m: int, q: float = 2.0, n_se: float = 3.0) -> Verdict:
    rep = bounds.K_q_wishart_bound(n, m, q)
    if not rep.valid:
        return Verdict("wishart", f"K_{q:g}", n, m, math.nan, math.nan, True, "bound invalid: " + rep.notes)
    est = empirical_K_q(s1, q)
    z = (est.value - rep.value) / est.std_error if est.std_error > 0 else -math.inf
    return Verdict(
        "wishart", f"K_{q:g}", n, m, est.value, rep.value, bool(z <= n_se),
        f"K_hat={est.value:.5g} +- {est.std_error:.2g}, bound={rep.value:.5g}",
    )


def loglog_slope(s1: np.ndarray, lo: float = 1e-6, hi: float = 1e-3, points: int = 10) -> float:
    eps = np.geomspace(lo, hi, points)
    F = ecdf(s1, eps)
    if np.any(F <= 0):
        raise ConfigurationError("too few draws: empirical CDF vanishes on the slope window")
    return float(np.polyfit(np.log(eps), np.log(F), 1)[0])


def truncated_inverse_mean(s1: np.ndarray, T: float) -> float:
    with np.errstate(divide="ignore"):
        return float(np.mean(np.minimum(1.0 / s1, T)))


def check_heavy_tail(s1: np.ndarray, n: int, slope_target: float = 0.5, slope_tol: float = 0.1,
                     growth_min: float = 5.0) -> list[Verdict]:
    """At m = n the CDF of s1 behaves like sqrt(eps) near 0, so E[1/s1] diverges."""
    slope = loglog_slope(s1)
    t_lo, t_hi = truncated_inverse_mean(s1, 1e2), truncated_inverse_mean(s1, 1e6)
    growth = t_hi / t_lo
    return [
        Verdict("wishart", "heavy-tail slope", n, n, slope, slope_target,
                abs(slope - slope_target) <= slope_tol, f"target {slope_target} +- {slope_tol}"),
        Verdict("wishart", "truncated 1/s1 growth", n, n, growth, growth_min, growth >= growth_min,
                f"E min(1/s1, T): {t_lo:.4g} at T=1e2, {t_hi:.4g} at T=1e6"),
    ]


def run_wishart_suite(pairs: Sequence[tuple[int, int]] = ((3, 5), (4, 6), (4, 8)), draws: int = 1_000_000,
                      seed: int = 0, heavy_n: int = 4, q: float = 2.0) -> list[Verdict]:
    verdicts = []
    for i, (n, m) in enumerate(pairs):
        if not m >= n >= 2:
            raise ConfigurationError(f"need m >= n >= 2, got ({n}, {m})")
        s1 = wishart_s1(n, m, draws, seed + i)
        verdicts.append(check_wishart_tail(s1, n, m))
        verdicts.append(check_density_sandwich(s1, n, m))
        verdicts.append(check_K_q(s1, n, m, q))
    if heavy_n:
        verdicts.extend(check_heavy_tail(wishart_s1(heavy_n, heavy_n, draws, seed + len(pairs)), heavy_n))
    return verdicts


@dataclass(frozen=True)
class SubgaussianFit:
    A: float
    B: float


def rv_bound(eps, n: int, m: int, A: float, B: float):
    """P(s1 <= eps (sqrt m - sqrt(n-1))^2) <= (A eps)^{k/2} + exp(-B m)."""
    k = m - n + 1
    return np.minimum(1.0, (A * np.asarray(eps, dtype=float)) ** (k / 2.0) + math.exp(-B * m))


def fit_rv_constants(s1: np.ndarray, n: int, m: int, eps: np.ndarray, B_max: float = 0.5) -> SubgaussianFit:
    """Smallest constants making the bound hold on ``eps`` for these draws.

    B is capped by the atom at zero (mass at or below the smallest grid point);
    A is then the least value covering the remaining CDF.
    """
    k = m - n + 1
    N = len(s1)
    gap2 = (math.sqrt(m) - math.sqrt(n - 1)) ** 2
    F = ecdf(s1 / gap2, eps)
    atom = max(F[0], 1.0 / N)
    B = min(B_max, -math.log(atom) / m)
    rest = np.clip(F - math.exp(-B * m), 0.0, None)
    A = float(np.max(rest ** (2.0 / k) / eps))
    return SubgaussianFit(max(A, 1e-300), B)


def run_subgaussian_suite(n: int = 4, m: int = 8, law: str = "rademacher", draws: int = 1_000_000,
                          seed: int = 0, n_se: float = 3.0) -> tuple[SubgaussianFit, list[Verdict]]:
    """Fit (A, B) on the first half of the draws and check the fitted bound on the second half."""
    if not m >= n >= 2:
        raise ConfigurationError(f"need m >= n >= 2, got ({n}, {m})")
    s1 = sample_s1(ProductScalar(n, law), m, draws, seed)
    half = draws // 2
    fit_part, test_part = s1[:half], s1[half:]
    eps = np.geomspace(1e-4, 1.0, 20)
    fit = fit_rv_constants(fit_part, n, m, eps)
    gap2 = (math.sqrt(m) - math.sqrt(n - 1)) ** 2
    emp = ecdf(test_part / gap2, eps)
    bound = rv_bound(eps, n, m, fit.A, fit.B)
    z = (emp - bound) / np.maximum(binomial_se(bound, len(test_part)), 1.0 / len(test_part))
    worst = int(np.argmax(z))
    plan = bounds.subgaussian_plan(n, m, fit.A, fit.B)
    verdicts = [
        Verdict("subgaussian", "holdout tail", n, m, float(z[worst]), n_se, bool(np.all(z <= n_se)),
                f"law={law}; fitted A={fit.A:.4g}, B={fit.B:.4g}; worst eps={eps[worst]:.3g}"),
        Verdict("subgaussian", "delta*sigma0 < 1", n, m, plan.delta_sigma0, 1.0, plan.delta_sigma0 < 1,
                f"sigma0={plan.sigma0:.4g}, delta={plan.delta:.4g}"),
    ]
    return fit, verdicts
