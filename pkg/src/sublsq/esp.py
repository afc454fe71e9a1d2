"""Point-charge fitting to electrostatic potential grids (atomic units throughout).

Sites sharing a symmetry class share one fitted charge: the design column of
a class is the sum of 1/|y - x_j| over its sites.
"""

from __future__ import annotations

import math
import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Problem, full_least_squares
from .errors import ConfigurationError, GeometryError, GridError
from .estimator import EstimatorConfig, RunResult, run_estimator
from .sampling import DiscreteUniform, block_rng

ANGSTROM_TO_BOHR = 1.8897259886

# Bondi radii, angstrom
VDW_RADII_ANGSTROM = {"H": 1.20, "C": 1.70, "N": 1.55, "O": 1.52, "F": 1.47, "S": 1.80, "Cl": 1.75}

WATER_OH_ANGSTROM = 0.9572
WATER_HOH_DEGREES = 104.52
WATER_CHARGES = {0: -0.782, 1: 0.391}


@dataclass(frozen=True)
class Site:
    label: str
    position: np.ndarray
    symmetry_class: int
    vdw_radius: float = math.nan  # bohr

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if math.isnan(self.vdw_radius):
            object.__setattr__(self, "vdw_radius", default_vdw_radius(self.label))


def element_of(label: str) -> str:
    letters = "".join(c for c in label if c.isalpha())
    if letters[:2].capitalize() in VDW_RADII_ANGSTROM:
        return letters[:2].capitalize()
    return letters[:1].upper()


def default_vdw_radius(label: str) -> float:
    try:
        return VDW_RADII_ANGSTROM[element_of(label)] * ANGSTROM_TO_BOHR
    except KeyError:
        raise ConfigurationError(f"no default van der Waals radius for site {label!r}") from None


@dataclass(frozen=True, eq=False)
class EspGrid:
    points: np.ndarray  # (M, 3) bohr
    values: np.ndarray  # (M,) hartree / e
    provenance: str = "external"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if len(pts) != len(vals):
            raise ConfigurationError(f"{len(pts)} grid points but {len(vals)} potential values")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ChargeModel:
    """Charges per symmetry class plus optional synthetic multipole perturbations.

    ``dipoles`` maps a site index to a dipole vector (e bohr); ``quadrupoles``
    maps a site index to ``(amplitude, axis)`` of an axial quadrupole
    (e bohr^2) whose potential is ``amplitude * P2(cos theta) / r^3``.
    """

    charges: Mapping[int, float]
    dipoles: Mapping[int, Sequence[float]] = field(default_factory=dict)
    quadrupoles: Mapping[int, tuple] = field(default_factory=dict)
    total_charge: Optional[float] = None


def water_sites() -> list[Site]:
    """Water with r(OH) = 0.9572 A and HOH = 104.52 deg; O at the origin, C2 axis along +z."""
    r = WATER_OH_ANGSTROM * ANGSTROM_TO_BOHR
    half = math.radians(WATER_HOH_DEGREES) / 2.0
    y, z = r * math.sin(half), r * math.cos(half)
    return [
        Site("O", [0.0, 0.0, 0.0], 0),
        Site("H1", [0.0, y, z], 1),
        Site("H2", [0.0, -y, z], 1),
    ]


def water_model(quadrupole: float = 0.0) -> ChargeModel:
    """Class charges (-0.782, +0.391) with an optional axial quadrupole on O along the C2 axis."""
    quads = {0: (quadrupole, (0.0, 0.0, 1.0))} if quadrupole else {}
    return ChargeModel(dict(WATER_CHARGES), quadrupoles=quads)


def symmetry_classes(sites: Sequence[Site]) -> list[int]:
    classes = sorted({s.symmetry_class for s in sites})
    if not classes:
        raise ConfigurationError("no sites")
    return classes


def _check_sites(sites):
    pos = np.array([s.position for s in sites])
    d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
    np.fill_diagonal(d, np.inf)
    if np.any(d == 0):
        raise ConfigurationError("site positions must be pairwise distinct")


def design_matrix(sites: Sequence[Site], points) -> np.ndarray:
    """Column per symmetry class: sum over its sites of 1/|y - x_j|."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    classes = symmetry_classes(sites)
    out = np.zeros((len(pts), len(classes)))
    for s in sites:
        c = classes.index(s.symmetry_class)
        out[:, c] += 1.0 / np.linalg.norm(pts - s.position, axis=1)
    return out


def build_esp_problem(sites: Sequence[Site], grid: EspGrid, r_min: float = 0.5, replace: bool = True) -> Problem:
    """Discrete charge-fitting problem over the grid points (uniform weights)."""
    _check_sites(sites)
    pos = np.array([s.position for s in sites])
    dist = np.linalg.norm(grid.points[:, None, :] - pos[None], axis=2)
    close = dist.min(axis=1) < r_min
    if close.any():
        i = int(np.argmax(close))
        raise GridError(
            f"grid point {i} at {grid.points[i].tolist()} lies within r_min={r_min} bohr of a site",
            point=grid.points[i],
        )
    classes = symmetry_classes(sites)
    values = grid.values

    def column(c):
        members = [s.position for s in sites if s.symmetry_class == c]
        return lambda y: sum(1.0 / np.linalg.norm(y - x, axis=1) for x in members)

    # grid points are unique keys into the potential table
    lookup = {p.tobytes(): v for p, v in zip(grid.points, values)}

    def target(y):
        try:
            return np.array([lookup[p.tobytes()] for p in np.asarray(y, dtype=float)])
        except KeyError:
            raise GridError("potential requested at a point outside the grid") from None

    problem = Problem([column(c) for c in classes], target, DiscreteUniform(grid.points, replace=replace), "esp")
    problem.__dict__["matrix"] = design_matrix(sites, grid.points)
    problem.__dict__["rhs"] = values
    return problem


def generate_shell_grid(
    sites: Sequence[Site],
    radii: Optional[Sequence[float]] = None,
    shell: tuple[float, float] = (1.4, 2.0),
    count: int = 2106,
    seed: int = 0,
) -> np.ndarray:
    """``count`` points uniform in the region inner <= min_j |y - x_j| / r_j <= outer."""
    inner, outer = shell
    if not 1.0 < inner < outer:
        raise ConfigurationError(f"shell scales must satisfy 1 < inner < outer, got {shell}")
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    pos = np.array([s.position for s in sites])
    r = np.asarray(radii if radii is not None else [s.vdw_radius for s in sites], dtype=float)
    lo = (pos - outer * r[:, None]).min(axis=0)
    hi = (pos + outer * r[:, None]).max(axis=0)
    rng = block_rng(seed, 0, stream=7)
    batch = max(4096, 4 * count)
    found, n_found, tried = [], 0, 0
    while n_found < count:
        cand = rng.uniform(lo, hi, size=(batch, 3))
        scaled = (np.linalg.norm(cand[:, None, :] - pos[None], axis=2) / r).min(axis=1)
        keep = cand[(scaled >= inner) & (scaled <= outer)]
        found.append(keep)
        n_found += len(keep)
        tried += batch
        if n_found < 1e-3 * tried:
            raise GeometryError(f"rejection efficiency {n_found / tried:.2e} is below 1e-3")
    pts = np.concatenate(found)[:count]
    return pts


def synthesize_esp(sites: Sequence[Site], model: ChargeModel, points) -> EspGrid:
    """Exact potential of the charge model (plus its perturbations) at ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    classes = symmetry_classes(sites)
    unknown = set(model.charges) - set(classes)
    if unknown:
        raise ConfigurationError(f"charges given for unknown symmetry classes {sorted(unknown)}")
    v = np.zeros(len(pts))
    for i, s in enumerate(sites):
        d = pts - s.position
        r = np.linalg.norm(d, axis=1)
        v += model.charges.get(s.symmetry_class, 0.0) / r
        if i in model.dipoles:
            v += d @ np.asarray(model.dipoles[i], dtype=float) / r**3
        if i in model.quadrupoles:
            amp, axis = model.quadrupoles[i]
            axis = np.asarray(axis, dtype=float)
            cos = d @ axis / (np.linalg.norm(axis) * r)
            v += amp * 0.5 * (3.0 * cos**2 - 1.0) / r**3
    return EspGrid(pts, v, "synthetic")


@dataclass(frozen=True, eq=False)
class SadmRun:
    extra: int
    m: int
    result: RunResult


def run_sadm_experiment(
    sites: Sequence[Site],
    grid: EspGrid,
    extras: Sequence[int],
    config: EstimatorConfig,
    threads: Optional[int] = None,
    replace: bool = True,
) -> list[SadmRun]:
    """One estimator run per extra row count m = n_s + extra, all sharing the master seed."""
    problem = build_esp_problem(sites, grid, replace=replace)
    n_s = problem.n
    runs = []
    for extra in extras:
        if extra < 0:
            raise ConfigurationError(f"extras must be >= 0, got {extra}")
        m = n_s + extra
        if m > len(grid):
            raise ConfigurationError(f"m={m} exceeds the grid size {len(grid)}")
        runs.append(SadmRun(extra, m, run_estimator(problem, dataclasses.replace(config, m=m), threads=threads)))
    return runs


def reference_fit(sites: Sequence[Site], grid: EspGrid, mse_floor: float = 1e-10):
    """Full least-squares charges over the whole grid."""
    return full_least_squares(build_esp_problem(sites, grid), mse_floor=mse_floor)


@dataclass(frozen=True)
class OrderingCheck:
    errors: np.ndarray
    std_errors: np.ndarray
    inversions: tuple
    passed: bool


def bias_ordering(runs: Sequence[SadmRun], alpha, coordinate: int = 0, n_se: float = 2.0,
                  allowed: int = 1) -> OrderingCheck:
    """Is |beta_bar - alpha| non-increasing along ``runs``?

    A step that increases the error is an inversion; up to ``allowed`` of them
    are tolerated when each stays within ``n_se`` combined standard errors.
    """
    a = float(np.asarray(alpha)[coordinate])
    err = np.array([abs(r.result.beta_bar[coordinate] - a) for r in runs])
    se = np.array([math.sqrt(r.result.cov[coordinate, coordinate] / r.result.accepted) for r in runs])
    inversions = []
    ok = True
    for i in range(len(runs) - 1):
        rise = err[i + 1] - err[i]
        if rise > 0:
            inversions.append(i)
            ok &= rise <= n_se * math.hypot(se[i], se[i + 1])
    return OrderingCheck(err, se, tuple(inversions), bool(ok and len(inversions) <= allowed))
