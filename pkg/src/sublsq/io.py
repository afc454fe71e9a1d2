"""Text file formats: grids, sites, sample dumps, run summaries and CSV tables.

Floats are written with 17 significant digits, so every parse-serialize cycle
reproduces the same binary64 values.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError
from .esp import ANGSTROM_TO_BOHR, EspGrid, Site

SCHEMA_VERSION = 1
LENGTH_UNITS = {"bohr": 1.0, "angstrom": ANGSTROM_TO_BOHR}
POTENTIAL_UNITS = ("hartree_per_e",)
# excluded from determinism comparisons
NONDETERMINISTIC_KEYS = ("timing",)


def fmt(x: float) -> str:
    return "%.17g" % x


def _units_header(units: str) -> str:
    if units not in LENGTH_UNITS:
        raise ConfigurationError(f"unknown length unit {units!r}; use bohr or angstrom")
    return f"# units: {units} hartree_per_e"


def _parse_units(line: str, lineno: int) -> Optional[str]:
    body = line.lstrip("#").strip()
    if not body.startswith("units:"):
        return None
    parts = body[len("units:"):].split()
    if len(parts) != 2 or parts[0] not in LENGTH_UNITS or parts[1] not in POTENTIAL_UNITS:
        raise ParseError(f"unsupported units {' '.join(parts)!r}", line=lineno)
    return parts[0]


def _records(path, ncols: Sequence[int]):
    """Yield (lineno, fields) for data lines; returns the length unit through the last item."""
    units = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                u = _parse_units(text, lineno)
                if u is not None:
                    if rows or units is not None:
                        raise ParseError("units header must precede the data", line=lineno)
                    units = u
                continue
            fields = text.split()
            if len(fields) not in ncols:
                raise ParseError(f"expected {' or '.join(map(str, ncols))} fields, got {len(fields)}", line=lineno)
            rows.append((lineno, fields))
    if units is None:
        raise ParseError("missing '# units: <bohr|angstrom> hartree_per_e' header", line=0)
    return units, rows


def _float(text: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", line=lineno)
    return value


def read_grid(path) -> EspGrid:
    """Grid file: ``x y z v`` per line, positions converted to bohr."""
    units, rows = _records(path, (4,))
    if not rows:
        raise ParseError("grid file has no data lines", line=0)
    data = np.array([[_float(f, ln) for f in fields] for ln, fields in rows])
    return EspGrid(data[:, :3] * LENGTH_UNITS[units], data[:, 3], "external")


def write_grid(path, grid: EspGrid, units: str = "bohr") -> None:
    header = _units_header(units)
    scale = LENGTH_UNITS[units]
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.write(f"# provenance: {grid.provenance}\n")
        for p, v in zip(grid.points, grid.values):
            fh.write(" ".join(fmt(c) for c in (*(p / scale if scale != 1.0 else p), v)) + "\n")


def read_sites(path) -> list[Site]:
    """Sites file: ``label x y z symmetry_class [vdw_radius]`` per line."""
    units, rows = _records(path, (5, 6))
    scale = LENGTH_UNITS[units]
    sites = []
    for ln, fields in rows:
        pos = np.array([_float(f, ln) for f in fields[1:4]]) * scale
        try:
            cls = int(fields[4])
        except ValueError:
            raise ParseError(f"symmetry class must be an integer, got {fields[4]!r}", line=ln) from None
        radius = _float(fields[5], ln) * scale if len(fields) == 6 else math.nan
        sites.append(Site(fields[0], pos, cls, radius))
    if not sites:
        raise ParseError("sites file has no data lines", line=0)
    pos = np.array([s.position for s in sites])
    for i in range(len(pos)):
        if np.any(np.all(pos[i + 1:] == pos[i], axis=1)):
            raise ConfigurationError(f"site {sites[i].label} shares its position with another site")
    return sites


def write_sites(path, sites: Sequence[Site], units: str = "bohr") -> None:
    header = _units_header(units)
    scale = LENGTH_UNITS[units]
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for s in sites:
            x, y, z = s.position / scale
            fh.write(f"{s.label} {fmt(x)} {fmt(y)} {fmt(z)} {s.symmetry_class} {fmt(s.vdw_radius / scale)}\n")


def write_samples(path, samples: Optional[np.ndarray]) -> bool:
    """One beta vector per line. Nothing is written (and False returned) when there are no samples."""
    if samples is None:
        return False
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    with open(path, "w") as fh:
        for row in arr:
            fh.write(" ".join(fmt(v) for v in row) + "\n")
    return True


def read_samples(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(f"expected {width} fields, got {len(fields)}", line=lineno)
            rows.append([_float(f, lineno) for f in fields])
    if not rows:
        raise ParseError("sample file is empty", line=0)
    return np.array(rows)


def read_matrix_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """CSV with one row per point: basis values followed by the target in the last column."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header line
                raise ParseError(f"non-numeric field in {rec!r}", line=lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError("ragged row", line=lineno)
    if not rows or len(rows[0]) < 2:
        raise ParseError("matrix file needs at least one basis column and a target column", line=0)
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise ParseError("non-finite entries in matrix file", line=0)
    return data[:, :-1], data[:, -1]


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'nan', 'inf', '-inf'."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(jsonable(doc), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def strip_nondeterministic(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k not in NONDETERMINISTIC_KEYS}


def run_summary(result, config: dict, problem: dict, checks: Iterable = (), timing: Optional[dict] = None) -> dict:
    """Schema-versioned summary of one estimator run with a fixed key order."""
    from .estimator import confidence_region

    region = confidence_region(result)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "run_summary",
        "config": config,
        "problem": problem,
        "beta_bar": result.beta_bar,
        "covariance": result.cov,
        "confidence": {
            "eta": result.eta,
            "quantile": region.quantile,
            "lower": region.lower,
            "upper": region.upper,
            "diameter": region.diameter,
        },
        "draws": {
            "attempted": result.attempted,
            "accepted": result.accepted,
            "acceptance_rate": result.acceptance_rate,
            "mode": result.mode,
        },
        "s1": {
            "min": float(result.s1.min()),
            "median": float(np.median(result.s1)),
            "max": float(result.s1.max()),
        },
        "k_q_hat": [
            {"q": k.q, "sigma": k.sigma, "value": k.value, "std_error": k.std_error}
            for _, k in sorted(result.k_q_sigma_hat.items())
        ],
        "trace_cov": result.trace_cov,
        "trace_cov_se": result.trace_se,
        "checks": [dict(c) for c in checks],
        "timing": timing or {},
    }
    return doc


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_running_average(path, checkpoints, values) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    header = ["draws"] + [f"beta_{j}" for j in range(values.shape[1])]
    write_csv(path, header, ([int(c), *map(float, v)] for c, v in zip(checkpoints, values)))


def write_histogram(path, hist) -> None:
    rows = ((float(lo), float(hi), float(d)) for lo, hi, d in zip(hist.edges[:-1], hist.edges[1:], hist.density))
    write_csv(path, ["left", "right", "density"], rows)


def write_fits(path, fits) -> None:
    header = ["family", "location", "scale", "log_likelihood", "ks_statistic", "converged", "iterations"]
    rows = ([f.family, float(f.location), float(f.scale), float(f.log_likelihood), float(f.ks_statistic),
             int(f.converged), f.iterations] for f in fits)
    write_csv(path, header, rows)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
