"""Sampling measures and reproducible per-draw random streams.

Draws are grouped into fixed blocks of ``BLOCK_SIZE`` consecutive draw
indices.  Block ``b`` of a run seeded with ``master_seed`` gets its own
Philox generator keyed by ``(master_seed, b)``, so the points of draw ``i``
depend only on ``(master_seed, i)``: never on thread count or on the order in
which blocks are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError

BLOCK_SIZE = 4096

# stream ids inside a block
POINT_STREAM = 0
KEY_STREAM = 1

_SQRT_LN2 = math.sqrt(math.log(2.0))


def block_rng(master_seed: int, block: int, stream: int = POINT_STREAM) -> np.random.Generator:
    """Counter-based generator for one block of draws."""
    if master_seed < 0 or master_seed >= 2**64:
        raise ConfigurationError(f"master seed must be a 64-bit unsigned integer, got {master_seed}")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(block), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DrawSeed:
    master_seed: int
    draw_index: int

    def __post_init__(self):
        if self.draw_index < 0:
            raise ConfigurationError("draw_index must be non-negative")

    @property
    def block(self) -> int:
        return self.draw_index // BLOCK_SIZE

    @property
    def offset(self) -> int:
        return self.draw_index % BLOCK_SIZE


@dataclass(frozen=True)
class ScalarLaw:
    """A named one-dimensional law with its sub-Gaussian tag."""

    name: str
    sampler: Callable[[np.random.Generator, tuple], np.ndarray] = field(repr=False)
    subgaussian: bool
    bound: Optional[float] = None  # sup |x| over the support, if finite
    scale: Optional[float] = None  # R in P(|x| > t) <= 2 exp(-t^2/R^2)

    def sample(self, rng, size):
        return self.sampler(rng, size)


def _bounded_scale(bound):
    return bound / _SQRT_LN2


LAWS = {
    "normal": ScalarLaw("normal", lambda rng, size: rng.standard_normal(size), True, None, math.sqrt(2.0)),
    "uniform": ScalarLaw("uniform", lambda rng, size: rng.uniform(-1.0, 1.0, size), True, 1.0, _bounded_scale(1.0)),
    "rademacher": ScalarLaw(
        "rademacher", lambda rng, size: 2.0 * rng.integers(0, 2, size) - 1.0, True, 1.0, _bounded_scale(1.0)
    ),
    "laplace": ScalarLaw("laplace", lambda rng, size: rng.laplace(0.0, 1.0, size), False),
    "cauchy": ScalarLaw("cauchy", lambda rng, size: rng.standard_cauchy(size), False),
}


def get_law(name: str) -> ScalarLaw:
    try:
        return LAWS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scalar law {name!r}; known: {sorted(LAWS)}") from None


class SamplingMeasure:
    """Base class.  Subclasses produce one block of draws at a time."""

    dim: int
    discrete = False
    label = "continuous"

    def sample_block(self, rng: np.random.Generator, count: int, m: int) -> np.ndarray:
        """Raw block: integer support indices (discrete) or coordinates ``(count, m, dim)``."""
        raise NotImplementedError

    def to_points(self, raw: np.ndarray) -> np.ndarray:
        return raw

    def check_draw_size(self, m: int) -> None:
        if m < 1:
            raise ConfigurationError(f"draw size m must be >= 1, got {m}")


@dataclass(frozen=True, eq=False)
class DiscreteUniform(SamplingMeasure):
    """Uniform law on ``M`` support points (one row of ``points`` each)."""

    points: np.ndarray
    replace: bool = True
    discrete = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) < 1:
            raise ConfigurationError("DiscreteUniform needs at least one support point")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def label(self) -> str:
        return "with-replacement" if self.replace else "without-replacement"

    def check_draw_size(self, m):
        super().check_draw_size(m)
        if not self.replace and m > self.size:
            raise ConfigurationError(
                f"without-replacement draw of m={m} points from a support of M={self.size}"
            )

    def sample_block(self, rng, count, m):
        M = self.size
        if self.replace:
            return rng.integers(0, M, size=(count, m))
        return _floyd_subsets(rng, count, m, M)

    def to_points(self, raw):
        return self.points[raw]


def _floyd_subsets(rng, count, m, M):
    """``count`` uniform m-subsets of range(M) (Floyd), rows shuffled."""
    out = np.empty((count, m), dtype=np.int64)
    for c, j in enumerate(range(M - m, M)):
        t = rng.integers(0, j + 1, size=count)
        if c:
            taken = (out[:, :c] == t[:, None]).any(axis=1)
            t = np.where(taken, j, t)
        out[:, c] = t
    return rng.permuted(out, axis=1)


@dataclass(frozen=True)
class GaussianStandard(SamplingMeasure):
    """Standard Gaussian law on R^dim."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dimension must be >= 1")

    def sample_block(self, rng, count, m):
        return rng.standard_normal((count, m, self.dim))


@dataclass(frozen=True, eq=False)
class ProductScalar(SamplingMeasure):
    """Product law nu^{(x) dim}; ``h`` is the coordinate map of the basis gamma_j(x) = h(x_j).

    ``h_bound`` declares sup |h| when ``h`` is bounded on the support of the law.
    """

    dim: int
    law: str = "normal"
    h: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h_bound: Optional[float] = None

    def __post_init__(self):
        get_law(self.law)
        if self.dim < 1:
            raise ConfigurationError("dimension must be >= 1")

    def sample_block(self, rng, count, m):
        return get_law(self.law).sample(rng, (count, m, self.dim))

    def coordinate_basis(self):
        """Basis functions gamma_j(x) = h(x_j), j = 0..dim-1."""
        h = self.h if self.h is not None else (lambda x: x)
        return [lambda pts, j=j: h(pts[:, j]) for j in range(self.dim)]


@dataclass(frozen=True, eq=False)
class NoisyLinear(SamplingMeasure):
    """Omega = Omega_base x Omega': the last coordinate of every point is an independent noise draw."""

    base: SamplingMeasure
    noise_law: str = "normal"
    noise_scale: float = 1.0

    def __post_init__(self):
        get_law(self.noise_law)

    @property
    def dim(self) -> int:
        return self.base.dim + 1

    @property
    def label(self) -> str:
        return f"noisy({self.base.label})"

    def check_draw_size(self, m):
        self.base.check_draw_size(m)

    def sample_block(self, rng, count, m):
        base = self.base.to_points(self.base.sample_block(rng, count, m))
        noise = self.noise_scale * get_law(self.noise_law).sample(rng, (count, m, 1))
        return np.concatenate([base, noise], axis=2)


def draw_block(measure: SamplingMeasure, m: int, master_seed: int, block: int) -> np.ndarray:
    """Raw draws for block ``block``: shape ``(BLOCK_SIZE, m)`` indices or ``(BLOCK_SIZE, m, dim)``."""
    measure.check_draw_size(m)
    return measure.sample_block(block_rng(master_seed, block), BLOCK_SIZE, m)


def draw_batch(measure: SamplingMeasure, m: int, master_seed: int, start: int, count: int) -> np.ndarray:
    """Raw draws for indices ``start .. start+count-1`` (same values as per-draw calls)."""
    if count <= 0:
        return measure.sample_block(block_rng(master_seed, 0), 0, m)
    first, last = start // BLOCK_SIZE, (start + count - 1) // BLOCK_SIZE
    parts = [draw_block(measure, m, master_seed, b) for b in range(first, last + 1)]
    raw = np.concatenate(parts) if len(parts) > 1 else parts[0]
    lo = start - first * BLOCK_SIZE
    return raw[lo:lo + count]


def draw_points(measure: SamplingMeasure, m: int, seed: DrawSeed) -> np.ndarray:
    """The ``m`` sample points of one draw, shape ``(m, dim)``."""
    raw = draw_block(measure, m, seed.master_seed, seed.block)[seed.offset]
    return measure.to_points(raw)


def is_subgaussian(measure: SamplingMeasure, entry_bound: Optional[float] = None):
    """Return ``(flag, R)`` with R the sub-Gaussian scale of the design entries, or ``(False, None)``.

    ``entry_bound`` overrides the bound on the basis values for discrete supports.
    """
    if isinstance(measure, NoisyLinear):
        return is_subgaussian(measure.base, entry_bound)
    if isinstance(measure, GaussianStandard):
        return True, math.sqrt(2.0)
    if isinstance(measure, ProductScalar):
        if measure.h_bound is not None:
            return True, _bounded_scale(measure.h_bound)
        law = get_law(measure.law)
        if measure.h is None and law.subgaussian:
            return True, law.scale
        return False, None
    if isinstance(measure, DiscreteUniform):
        bound = entry_bound if entry_bound is not None else float(np.max(np.abs(measure.points)))
        return True, _bounded_scale(bound) if bound > 0 else 0.0
    return False, None
