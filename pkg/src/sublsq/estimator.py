"""Thresholded Monte Carlo estimator over random least-squares subproblems.

Each draw ``i`` samples ``m`` points, solves the ``m x n`` subproblem and is
accepted when its smallest Gram eigenvalue exceeds the threshold ``sigma``.
The estimate is the mean of the first ``N`` accepted solutions in draw-index
order, so results depend only on the seed, never on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .core import Problem, solve_batch
from .errors import ConfigurationError, ThresholdTooHighError
from .sampling import BLOCK_SIZE, KEY_STREAM, block_rng, draw_block

THREADS_ENV = "SUBLSQ_THREADS"


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            threads = int(value)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
        if threads < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be >= 1")
        return threads
    return os.cpu_count() or 1


def parse_retention(spec: str) -> tuple[str, int]:
    """``none`` | ``all`` | ``reservoir:k``."""
    if spec in ("none", "all"):
        return spec, 0
    kind, _, k = spec.partition(":")
    if kind == "reservoir" and k.isdigit() and int(k) > 0:
        return "reservoir", int(k)
    raise ConfigurationError(f"invalid retention policy {spec!r} (none, all or reservoir:k)")


@dataclass(frozen=True)
class EstimatorConfig:
    m: int
    n_draws: int
    sigma: float = 0.0
    eta: float = 0.05
    seed: int = 0
    max_attempts: Optional[int] = None
    retain: str = "none"
    q_values: Sequence[float] = (1.0, 2.0)
    checkpoints: int = 200

    def __post_init__(self):
        if self.n_draws < 2:
            raise ConfigurationError("n_draws must be >= 2")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ConfigurationError("sigma must be a finite non-negative number")
        if not 0 < self.eta < 1:
            raise ConfigurationError("eta must lie in (0, 1)")
        if self.max_attempts is not None and self.max_attempts < self.n_draws:
            raise ConfigurationError("max_attempts must be >= n_draws")
        if any(q < 1 for q in self.q_values):
            raise ConfigurationError("K_q needs q >= 1")
        parse_retention(self.retain)

    @property
    def attempt_cap(self) -> int:
        return self.max_attempts if self.max_attempts is not None else 1000 * self.n_draws

    def validate(self, n: int) -> None:
        if self.m < n:
            raise ConfigurationError(f"m={self.m} rows cannot determine n={n} unknowns")


@dataclass(frozen=True, eq=False)
class RunResult:
    beta_bar: np.ndarray
    cov: np.ndarray
    attempted: int
    accepted: int
    m: int
    sigma: float
    eta: float
    seed: int
    mode: str
    s1: np.ndarray = field(repr=False)
    k_q_sigma_hat: dict = field(default_factory=dict)
    running_average: Optional[tuple] = field(default=None, repr=False)
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    sample_indices: Optional[np.ndarray] = field(default=None, repr=False)
    trace_se: float = math.nan

    @property
    def n(self) -> int:
        return len(self.beta_bar)

    @property
    def trace_cov(self) -> float:
        return float(np.trace(self.cov))

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted

    @property
    def conf_halfwidths(self) -> np.ndarray:
        x = gaussian_tail_quantile(self.n, self.eta)
        return x * np.sqrt(np.clip(np.diag(self.cov), 0.0, None) / self.accepted)

    @property
    def conf_diameter(self) -> float:
        x = gaussian_tail_quantile(self.n, self.eta)
        return 2.0 * x * math.sqrt(max(self.trace_cov, 0.0) / self.accepted)


@dataclass(frozen=True)
class ConfidenceRegion:
    center: np.ndarray
    halfwidths: np.ndarray
    diameter: float
    quantile: float

    @property
    def lower(self):
        return self.center - self.halfwidths

    @property
    def upper(self):
        return self.center + self.halfwidths

    def contains(self, point) -> bool:
        return bool(np.all(np.abs(np.asarray(point) - self.center) <= self.halfwidths))


@dataclass(frozen=True)
class KqEstimate:
    q: float
    sigma: float
    value: float
    std_error: float

    @property
    def within_trivial_bound(self) -> bool:
        """K_q^sigma <= 1/sigma holds for every accepted stream when sigma > 0."""
        return self.sigma <= 0 or self.value <= 1.0 / self.sigma


def gaussian_tail_quantile(n: int, eta: float) -> float:
    """x(n, eta) with P(Z > x) = eta / (2n) for a standard normal Z."""
    if n < 1 or not 0 < eta <= 1:
        raise ConfigurationError(f"need n >= 1 and eta in (0, 1), got n={n}, eta={eta}")
    target = eta / (2.0 * n)
    if target >= 0.5:
        return 0.0
    return brentq(lambda x: ndtr(-x) - target, 0.0, 40.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def confidence_region(result: RunResult, eta: Optional[float] = None) -> ConfidenceRegion:
    eta = result.eta if eta is None else eta
    x = gaussian_tail_quantile(result.n, eta)
    var = np.clip(np.diag(result.cov), 0.0, None)
    half = x * np.sqrt(var / result.accepted)
    diameter = 2.0 * x * math.sqrt(max(result.trace_cov, 0.0) / result.accepted)
    return ConfidenceRegion(result.beta_bar.copy(), half, diameter, x)


def empirical_K_q(source, q: float, sigma: Optional[float] = None) -> KqEstimate:
    """(mean of s1^{-q/2})^{2/q} over accepted draws, with a jackknife standard error."""
    if isinstance(source, RunResult):
        s1, sig = source.s1, source.sigma if sigma is None else sigma
    else:
        s1, sig = np.asarray(source, dtype=float), 0.0 if sigma is None else sigma
    if q < 1:
        raise ConfigurationError("K_q needs q >= 1")
    y = s1 ** (-q / 2.0)
    N = len(y)
    total = float(np.sum(y))
    value = (total / N) ** (2.0 / q)
    if N < 2:
        return KqEstimate(q, sig, value, math.inf)
    loo = ((total - y) / (N - 1)) ** (2.0 / q)
    se = math.sqrt((N - 1) / N * float(np.sum((loo - loo.mean()) ** 2)))
    return KqEstimate(q, sig, value, se)


def default_checkpoints(N: int, count: int = 200) -> np.ndarray:
    return np.unique(np.round(np.geomspace(1, N, count)).astype(np.int64))


@dataclass
class _Block:
    indices: np.ndarray
    beta: np.ndarray
    s1: np.ndarray
    keys: Optional[np.ndarray]


def _run_block(problem: Problem, config: EstimatorConfig, block: int, limit: int, need_keys: bool) -> _Block:
    start = block * BLOCK_SIZE
    count = min(BLOCK_SIZE, limit - start)
    raw = draw_block(problem.measure, config.m, config.seed, block)[:count]
    if problem.discrete:
        G, F = problem.matrix[raw], problem.rhs[raw]
    else:
        pts = problem.measure.to_points(raw)
        G, F = problem.evaluate(pts.reshape(count * config.m, -1))
        G = G.reshape(count, config.m, problem.n)
        F = F.reshape(count, config.m)
    sol = solve_batch(G, F, config.sigma)
    acc = np.flatnonzero(sol.accepted)
    keys = None
    if need_keys:
        keys = block_rng(config.seed, block, KEY_STREAM).random(BLOCK_SIZE)[:count][acc]
    return _Block(acc + start, sol.beta[acc], sol.s1[acc], keys)


def _merge_moments(blocks):
    """Chan et al. pairwise update of (count, mean, scatter) in block order."""
    count, mean, scatter = 0, None, None
    for b in blocks:
        k = len(b.beta)
        if k == 0:
            continue
        bm = b.beta.mean(axis=0)
        d = b.beta - bm
        bs = d.T @ d
        if count == 0:
            count, mean, scatter = k, bm, bs
            continue
        total = count + k
        delta = bm - mean
        mean = mean + delta * (k / total)
        scatter = scatter + bs + np.outer(delta, delta) * (count * k / total)
        count = total
    return count, mean, scatter


def run_estimator(problem: Problem, config: EstimatorConfig, threads: Optional[int] = None) -> RunResult:
    """Draw, solve, filter on s1 > sigma and average until ``config.n_draws`` draws are accepted."""
    config.validate(problem.n)
    problem.measure.check_draw_size(config.m)
    if problem.discrete:
        problem.matrix  # evaluate once, before worker threads share it
    threads = default_threads() if threads is None else max(1, int(threads))
    policy, k_res = parse_retention(config.retain)
    N, cap = config.n_draws, config.attempt_cap
    n_blocks = -(-cap // BLOCK_SIZE)

    collected: list[_Block] = []
    accepted = 0
    attempted = cap
    next_block = 0

    def task(b):
        return _run_block(problem, config, b, cap, policy == "reservoir")

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while accepted < N and next_block < n_blocks:
            wave = range(next_block, min(next_block + threads, n_blocks))
            next_block = wave.stop
            results = list(pool.map(task, wave)) if pool else [task(b) for b in wave]
            for r in results:
                take = min(len(r.indices), N - accepted)
                if take < len(r.indices):
                    r = _Block(r.indices[:take], r.beta[:take], r.s1[:take],
                               None if r.keys is None else r.keys[:take])
                collected.append(r)
                accepted += take
                if accepted == N:
                    attempted = int(r.indices[-1]) + 1
                    break
    finally:
        if pool:
            pool.shutdown()

    if accepted < N:
        rate = accepted / attempted
        raise ThresholdTooHighError(
            f"only {accepted} of {N} draws accepted after {attempted} attempts "
            f"(acceptance rate {rate:.3g}); lower sigma or raise max_attempts",
            attempted=attempted,
            accepted=accepted,
        )

    count, mean, scatter = _merge_moments(collected)
    cov = scatter / (count - 1)
    betas = np.concatenate([b.beta for b in collected])
    s1 = np.concatenate([b.s1 for b in collected])
    indices = np.concatenate([b.indices for b in collected])

    # squared deviations feed the standard error of the trace
    dev2 = np.einsum("bi,bi->b", betas - mean, betas - mean)
    trace_se = float(dev2.std(ddof=1) / math.sqrt(count))

    ck = default_checkpoints(N, config.checkpoints)
    running = (ck, np.cumsum(betas, axis=0)[ck - 1] / ck[:, None])

    samples = sample_idx = None
    if policy == "all":
        samples, sample_idx = betas, indices
    elif policy == "reservoir":
        keys = np.concatenate([b.keys for b in collected])
        keep = np.sort(np.argsort(keys, kind="stable")[:k_res])
        samples, sample_idx = betas[keep], indices[keep]

    result = RunResult(
        beta_bar=mean,
        cov=cov,
        attempted=attempted,
        accepted=count,
        m=config.m,
        sigma=config.sigma,
        eta=config.eta,
        seed=config.seed,
        mode=problem.measure.label,
        s1=s1,
        running_average=running,
        samples=samples,
        sample_indices=sample_idx,
        trace_se=trace_se,
    )
    for q in config.q_values:
        result.k_q_sigma_hat[float(q)] = empirical_K_q(result, q)
    return result


def variance_bound(n: int, m: int, sigma: float, rho_sup: float) -> float:
    """n m^2 sigma^{-1} ||rho||_inf^2: the trace-of-covariance bound with K_q^sigma <= 1/sigma, p = inf."""
    if sigma <= 0:
        raise ConfigurationError("the trivial K_q bound needs sigma > 0")
    return n * m * m * rho_sup * rho_sup / sigma


def consistency_bound(n: int, m: int, k1: float, p_accept: float, rho_norm: float, p: float = math.inf) -> float:
    """sqrt(n) m sqrt(K_1^sigma) ||rho||_p / P(s1 >= sigma)^{1/p}, bounding ||beta_bar^sigma - a||."""
    weight = 1.0 if math.isinf(p) else p_accept ** (1.0 / p)
    return math.sqrt(n) * m * math.sqrt(k1) * rho_norm / weight
