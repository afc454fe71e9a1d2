"""Closed-form bounds and parameter planners for the randomized subsystem estimator.

Absolute constants that the theory leaves unspecified are set to 1, so every
cost figure is in relative units: only ratios and scaling laws are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .estimator import gaussian_tail_quantile

E2 = math.e ** 2


@dataclass(frozen=True)
class BoundReport:
    name: str
    value: Optional[float]
    valid: bool
    notes: str = ""

    @classmethod
    def invalid(cls, name, notes):
        return cls(name, None, False, notes)


@dataclass(frozen=True)
class BoundInputs:
    n: int
    m: int
    q: float = 2.0
    p: float = math.inf
    epsilon: float = 1e-2
    eta: float = 0.05
    rho_norm: float = 1.0
    sigma: float = 0.0
    subg_A: float = 1.0
    subg_B: float = 0.5
    subg_R: Optional[float] = None
    K_q: Optional[float] = None
    p_accept: Optional[float] = None

    @property
    def k(self) -> int:
        return self.m - self.n + 1

    def as_dict(self):
        return asdict(self)


def _conjugate(p, q, total):
    """True when a/p + a/q == 1 with a = 2/total (total=1: 1/p+1/q=1; total=2: 2/p+2/q=1)."""
    inv = lambda x: 0.0 if math.isinf(x) else 1.0 / x  # noqa: E731
    return math.isclose(total * (inv(p) + inv(q)), 1.0, rel_tol=1e-12, abs_tol=1e-12)


def _wishart_k(n, m):
    if n < 2 or m < n:
        raise DomainError(f"Wishart bounds need m >= n >= 2, got n={n}, m={m}")
    return m - n + 1


def wishart_tail_bound(n: int, m: int, eps):
    """min(1, (delta eps)^gamma) with delta = e^2 m / k^2 and gamma = k/2, bounding P(s1 <= eps)."""
    k = _wishart_k(n, m)
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0):
        raise DomainError("eps must be non-negative")
    out = np.minimum(1.0, (E2 * m / k**2 * eps) ** (k / 2.0))
    return float(out) if out.ndim == 0 else out


def wishart_log_L(n: int, m: int) -> float:
    k = _wishart_k(n, m)
    return (k / 2.0 - 1.0) * math.log(2.0) + math.lgamma((m + 1) / 2.0) - math.lgamma(n / 2.0) - math.lgamma(k)


def wishart_density_bounds(n: int, m: int, x):
    """Lower and upper envelopes of the density of s1 for an m x n standard Gaussian matrix."""
    k = _wishart_k(n, m)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("density envelopes are defined for x > 0")
    logL = wishart_log_L(n, m)
    common = logL + (k / 2.0 - 1.0) * np.log(x)
    return np.exp(common - n * x / 2.0), np.exp(common - x / 2.0)


def K_q_wishart_bound(n: int, m: int, q: float) -> BoundReport:
    """(e^2 m / k^2)(1 - q/k)^{-2/q}, valid for 1 <= q < k."""
    k = _wishart_k(n, m)
    name = f"K_{q:g} Wishart bound"
    if not 1 <= q < k:
        return BoundReport.invalid(name, f"needs 1 <= q < k = {k}; E[s1^(-q/2)] is infinite otherwise")
    return BoundReport(name, E2 * m / k**2 * (1.0 - q / k) ** (-2.0 / q), True, f"k = {k}")


def negative_moment_bound(delta: float, gamma: float, r: float) -> BoundReport:
    """E[Y^{-r}] <= delta^r / (1 - r/gamma) when P(Y <= e) <= (delta e)^gamma for all e >= 0."""
    name = "negative moment bound"
    if delta <= 0 or gamma <= 0:
        return BoundReport.invalid(name, "needs delta > 0 and gamma > 0")
    if not 0 < r < gamma:
        return BoundReport.invalid(name, f"needs 0 < r < gamma = {gamma:g}")
    return BoundReport(name, delta**r / (1.0 - r / gamma), True)


def conditional_negative_moment_bound(delta: float, gamma: float, r: float, sigma: float) -> BoundReport:
    """Bound on E[Y^{-r} | Y >= sigma] when the tail estimate holds for e >= sigma, 0 < sigma < 1/delta."""
    name = "conditional negative moment bound"
    if delta <= 0 or gamma <= 0 or r <= 0:
        return BoundReport.invalid(name, "needs delta, gamma, r > 0")
    if r == gamma:
        return BoundReport.invalid(name, "needs r != gamma")
    if not 0 < sigma < 1.0 / delta:
        return BoundReport.invalid(name, f"needs 0 < sigma < 1/delta = {1.0 / delta:g}")
    ds = delta * sigma
    value = delta**r / (1.0 - ds**gamma) * (1.0 / (1.0 - r / gamma) + ds ** (gamma - r) / (1.0 - gamma / r))
    return BoundReport(name, value, True)


def optimal_wishart_parameters(n: int) -> tuple[float, int]:
    """Cost-optimal gamma* = (n + 2 + sqrt(n^2 + 8))/4 and m* = round(2 gamma* + n - 1)."""
    if n < 2:
        raise DomainError("optimal Wishart parameters need n >= 2")
    gamma_star = (n + 2 + math.sqrt(n * n + 8)) / 4.0
    return gamma_star, int(round(2 * gamma_star + n - 1))


def wishart_cost_factor(n: int, m: int) -> float:
    """The m-dependent part m^4 / ((m-n+1)(m-n-1)) of the Wishart cost (m >= n + 2)."""
    if m < n + 2:
        return math.inf
    return m**4 / ((m - n + 1) * (m - n - 1))


@dataclass(frozen=True)
class SubgaussianPlan:
    sigma0: float
    delta: float
    gamma: float
    delta_sigma0: float


def subgaussian_plan(n: int, m: int, A: float = 1.0, B: float = 0.5) -> SubgaussianPlan:
    """Threshold sigma0 and tail constants (delta, gamma) derived from a Rudelson-Vershynin estimate."""
    if n < 2 or m < n:
        raise DomainError(f"needs m >= n >= 2, got n={n}, m={m}")
    if A <= 0 or B <= 0:
        raise DomainError("A and B must be positive")
    k = m - n + 1
    gap2 = (math.sqrt(m) - math.sqrt(n - 1)) ** 2
    sigma0 = B * B * m * m * gap2 / (k * k * A) * math.exp(-2.0 * B * m / k)
    delta = (1.0 + k / (B * m)) ** 2 * A / gap2
    ds0 = (1.0 + B * m / k) ** 2 * math.exp(-2.0 * B * m / k)
    return SubgaussianPlan(sigma0, delta, k / 2.0, ds0)


REGIMES = ("invertible", "thresholded", "wishart", "subgaussian")


def cost_bound(inputs: BoundInputs, regime: str) -> BoundReport:
    """Computational-cost bound (relative units, constant C = 1) for one regime."""
    if regime not in REGIMES:
        raise ConfigurationError(f"unknown regime {regime!r}; choose from {REGIMES}")
    n, m, p, q = inputs.n, inputs.m, inputs.p, inputs.q
    if not _conjugate(p, q, 2):
        raise ConfigurationError(f"variance bounds need 2/p + 2/q = 1, got p={p}, q={q}")
    name = f"cost ({regime})"
    base = inputs.epsilon ** -2 * n**3 * m**3 * math.log(n) * inputs.rho_norm**2

    if regime == "invertible":
        if inputs.K_q is None:
            return BoundReport.invalid(name, "needs an estimate of K_q")
        return BoundReport(name, base * inputs.K_q, True, "relative units")

    if regime == "thresholded":
        if inputs.sigma <= 0:
            return BoundReport.invalid(name, "needs sigma > 0")
        K = inputs.K_q if inputs.K_q is not None else 1.0 / inputs.sigma
        P = inputs.p_accept if inputs.p_accept is not None else 1.0
        expo = -1.0 - (0.0 if math.isinf(p) else 2.0 / p)
        note = "relative units" + ("" if inputs.K_q is not None else "; K_q^sigma <= 1/sigma")
        return BoundReport(name, base * P**expo * K, True, note)

    if regime == "wishart":
        try:
            K = K_q_wishart_bound(n, m, q)
        except DomainError as exc:
            return BoundReport.invalid(name, str(exc))
        if not K.valid:
            return BoundReport.invalid(name, K.notes)
        note = "relative units"
        if n >= 2 and m == optimal_wishart_parameters(n)[1]:
            asym = inputs.epsilon ** -2 * n**5 * math.log(n) * inputs.rho_norm**2
            note += f"; m = m*, asymptotic form eps^-2 n^5 log n rho^2 = {asym:.6g}"
        return BoundReport(name, base * K.value, True, note)

    # sub-Gaussian: sigma0 threshold, K_2^sigma through the conditional moment bound (r = 1)
    try:
        plan = subgaussian_plan(n, m, inputs.subg_A, inputs.subg_B)
    except DomainError as exc:
        return BoundReport.invalid(name, str(exc))
    sigma = inputs.sigma if inputs.sigma > 0 else plan.sigma0
    g, d = plan.gamma, plan.delta
    if sigma < plan.sigma0:
        return BoundReport.invalid(name, f"sigma below sigma0 = {plan.sigma0:.6g}")
    if g <= 1:
        return BoundReport.invalid(name, "needs gamma = k/2 > 1")
    ds = d * sigma
    if ds >= 1:
        return BoundReport.invalid(name, "needs delta * sigma < 1")
    value = (inputs.epsilon ** -2 * n**3 * math.log(n) * inputs.rho_norm**2 * m**3 * d
             / (1.0 - ds**g) ** 2 * (1.0 / (1.0 - 1.0 / g) + ds ** (g - 1.0) / (1.0 - g)))
    return BoundReport(name, value, True, f"relative units; sigma = {sigma:.6g}")


def plan(inputs: BoundInputs) -> list[BoundReport]:
    """All bound evaluations relevant to one parameter set, in a fixed order."""
    n, m = inputs.n, inputs.m
    reports = []
    x = gaussian_tail_quantile(n, inputs.eta)
    reports.append(BoundReport("x(n,eta)", x, True, "normal tail quantile at eta/2n"))
    if inputs.eta / (2 * n) <= 0.5:
        xb = 2.0 * math.log(n * math.sqrt(2.0) / (inputs.eta * math.sqrt(math.pi)))
        reports.append(BoundReport("x(n,eta)^2 upper bound", xb, xb > 0 and x >= 1, "valid once x >= 1"))
    if n >= 2:
        gs, ms = optimal_wishart_parameters(n)
        reports.append(BoundReport("gamma*", gs, True))
        reports.append(BoundReport("m*", float(ms), True))
    if n >= 2 and m >= n:
        k = m - n + 1
        reports.append(BoundReport("Wishart tail delta", E2 * m / k**2, True, f"gamma = k/2 = {k / 2:g}"))
        if inputs.epsilon >= 0:
            reports.append(BoundReport("P(s1 <= eps) Wishart", wishart_tail_bound(n, m, inputs.epsilon), True))
        reports.append(K_q_wishart_bound(n, m, inputs.q))
        sp = subgaussian_plan(n, m, inputs.subg_A, inputs.subg_B)
        reports.append(BoundReport("sigma0", sp.sigma0, True, f"A = {inputs.subg_A:g}, B = {inputs.subg_B:g}"))
        reports.append(BoundReport("subgaussian delta", sp.delta, True))
        reports.append(BoundReport("delta*sigma0", sp.delta_sigma0, sp.delta_sigma0 < 1))
    if inputs.sigma > 0:
        reports.append(BoundReport("K_q^sigma trivial bound", 1.0 / inputs.sigma, True))
    if _conjugate(inputs.p, inputs.q, 2):
        for regime in REGIMES:
            reports.append(cost_bound(inputs, regime))
    else:
        reports.append(BoundReport.invalid("cost", "2/p + 2/q != 1"))
    return reports
