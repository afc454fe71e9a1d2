"""Diagnostics for the distribution of per-draw solutions.

Maximum-likelihood Cauchy and Gaussian fits, running averages, Hill tail
exponents and normalized histograms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError, FitError


@dataclass(frozen=True, eq=False)
class SampleSet:
    values: np.ndarray
    coordinate_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise FitError("samples must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class FitResult:
    family: str
    location: float
    scale: float
    log_likelihood: float
    ks_statistic: float
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class TailEstimate:
    alpha: float
    ci_low: float
    ci_high: float
    k_top: int


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self):
        return np.diff(self.edges)


def _values(samples) -> np.ndarray:
    if isinstance(samples, SampleSet):
        return samples.values
    return SampleSet(samples).values


def _cauchy_score(z):
    """Mean score in (location/scale, log scale) and its Jacobian; z = (x - loc) / scale."""
    z2 = z * z
    d = 1.0 + z2
    g = np.array([np.mean(2.0 * z / d), np.mean((z2 - 1.0) / d)])
    # derivatives of g with respect to (loc/scale, log scale)
    h11 = np.mean(2.0 * (z2 - 1.0) / d**2)
    h12 = np.mean(-4.0 * z / d**2)
    h22 = np.mean(-4.0 * z2 / d**2)
    return g, np.array([[h11, h12], [h12, h22]])


def _cauchy_loglik(x, loc, scale):
    z = (x - loc) / scale
    return -len(x) * math.log(math.pi * scale) - float(np.sum(np.log1p(z * z)))


def fit_cauchy(samples, tol: float = 1e-10, max_iter: int = 200) -> FitResult:
    """Cauchy MLE by damped Newton from (median, half interquartile range).

    Convergence is declared when the dimensionless mean score, or a full
    Newton step, drops below ``tol``; otherwise the initializer is returned
    with ``converged=False``.
    """
    x = _values(samples)
    if len(x) < 10:
        raise FitError(f"Cauchy fit needs at least 10 samples, got {len(x)}")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    scale0 = 0.5 * (q3 - q1)
    if scale0 <= 0:
        spread = np.max(np.abs(x - med))
        if spread == 0:
            raise FitError("all samples are equal: zero scale")
        scale0 = spread * 1e-3
    loc, scale = float(med), float(scale0)
    ll = _cauchy_loglik(x, loc, scale)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, H = _cauchy_score((x - loc) / scale)
        if np.max(np.abs(g)) < tol:
            converged = True
            break
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        if float(step @ g) <= 0:
            # not an ascent direction: Fisher scoring (information diag(1/2, 1/2))
            step = 2.0 * g
        # near the optimum the gain N g^2 drops below the rounding of ll itself
        slack = 64 * np.finfo(float).eps * (abs(ll) + len(x))
        t = 1.0
        while t > 1e-12:
            new_loc = loc + t * step[0] * scale
            new_scale = scale * math.exp(t * step[1])
            new_ll = _cauchy_loglik(x, new_loc, new_scale)
            if new_ll >= ll - slack:
                break
            t *= 0.5
        else:
            break
        loc, scale, ll = new_loc, new_scale, new_ll
        if t == 1.0 and np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        loc, scale = float(med), float(scale0)
        ll = _cauchy_loglik(x, loc, scale)
    ks = stats.kstest(x, "cauchy", args=(loc, scale)).statistic
    return FitResult("cauchy", loc, scale, ll, float(ks), converged, it)


def fit_gaussian(samples) -> FitResult:
    """Normal MLE (mean, population standard deviation)."""
    x = _values(samples)
    if len(x) < 2:
        raise FitError("Gaussian fit needs at least 2 samples")
    mu = float(np.mean(x))
    sd = float(np.sqrt(np.mean((x - mu) ** 2)))
    if sd == 0:
        raise FitError("all samples are equal: zero scale")
    ll = float(np.sum(stats.norm.logpdf(x, mu, sd)))
    ks = stats.kstest(x, "norm", args=(mu, sd)).statistic
    return FitResult("gaussian", mu, sd, ll, float(ks))


def running_average(samples, checkpoints: Sequence[int]) -> np.ndarray:
    """Prefix means at the given (1-based, increasing) sample counts."""
    x = np.asarray(samples, dtype=float)
    ck = np.asarray(checkpoints, dtype=np.int64)
    if len(ck) and (np.any(np.diff(ck) <= 0) or ck[0] < 1 or ck[-1] > len(x)):
        raise ConfigurationError("checkpoints must be increasing counts within the sample size")
    return np.cumsum(x, axis=0)[ck - 1] / (ck if x.ndim == 1 else ck[:, None])


def tail_exponent(samples, k_top: int, n_boot: int = 200, seed: int = 0, level: float = 0.95) -> TailEstimate:
    """Hill estimator of the tail index from the ``k_top`` largest absolute values, bootstrap CI."""
    x = np.abs(_values(samples))
    if not 1 <= k_top < len(x) / 2:
        raise ConfigurationError(f"k_top must be in [1, n/2), got {k_top} for n={len(x)}")

    def hill(v):
        top = np.partition(v, len(v) - k_top - 1)[len(v) - k_top - 1:]
        top.sort()
        ref = top[0]
        if ref <= 0:
            return math.inf
        spread = float(np.mean(np.log(top[1:] / ref)))
        # tied top values: no power-law tail at this depth
        return 1.0 / spread if spread > 0 else math.inf

    alpha = hill(x)
    rng = np.random.default_rng(seed)
    boots = np.array([hill(x[rng.integers(0, len(x), len(x))]) for _ in range(n_boot)])
    # no interpolation, so infinite bootstrap values stay well defined
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2], method="inverted_cdf")
    return TailEstimate(alpha, float(lo), float(hi), k_top)


def histogram(samples, bins=50, range: Optional[tuple] = None) -> Histogram:
    """Densities normalized so that sum(density * width) = 1 over the binned range."""
    x = _values(samples)
    if isinstance(bins, int) and bins < 1:
        raise ConfigurationError("bins must be >= 1")
    if range is not None:
        if not range[1] > range[0]:
            raise ConfigurationError(f"empty histogram range {range}")
        x = x[(x >= range[0]) & (x <= range[1])]
    elif len(x) and x.min() == x.max() and isinstance(bins, int):
        raise ConfigurationError("samples span an empty range; pass an explicit range")
    if len(x) == 0:
        raise ConfigurationError("no samples inside the histogram range")
    counts, edges = np.histogram(x, bins=bins, range=range)
    density = counts / (len(x) * np.diff(edges))
    return Histogram(edges, density)


def skewness(samples) -> float:
    return float(stats.skew(_values(samples)))


def summarize(samples, k_top: Optional[int] = None) -> dict:
    """Both fits plus tail and skew diagnostics for one coordinate."""
    x = _values(samples)
    c, g = fit_cauchy(x), fit_gaussian(x)
    out = {
        "count": len(x),
        "cauchy": c,
        "gaussian": g,
        "preferred_loglik": "cauchy" if c.log_likelihood > g.log_likelihood else "gaussian",
        "preferred_ks": "cauchy" if c.ks_statistic < g.ks_statistic else "gaussian",
        "skewness": skewness(x),
    }
    k = k_top if k_top is not None else max(1, min(len(x) // 100, len(x) // 2 - 1))
    if len(x) >= 20:
        out["tail"] = tail_exponent(x, k, n_boot=50)
    return out
