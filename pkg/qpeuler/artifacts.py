"""
On-disk formats: coefficient dumps, state snapshots, diagnostics and
trajectory CSVs, the run manifest, torus-lift dumps and evaluation grids.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import GridBudgetError
from .freq_lattice import ModeSet
from .models import RunManifest
from .qp_diffeo import TorusDiffeo
from .qp_field import NormParams, QPScalar, QPVectorField, evaluate

logger = logging.getLogger(__name__)

GRID_BUDGET = int(float(os.getenv("QPEULER_GRID_BUDGET", "4000000")))

PathLike = Union[str, Path]
Field = Union[QPScalar, QPVectorField]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# -------------------------------------------------------------------------
# Coefficient dump
# -------------------------------------------------------------------------


def dump_coefficients(f: Field, path: PathLike, header: Optional[Dict[str, Any]] = None) -> Path:
    """
    Line-record dump: '# key: json' header lines, then one line per stored mode
    with the M mode indices followed by (re, im) for every component.
    """
    path = Path(path)
    ms = f.modes
    vector = isinstance(f, QPVectorField)
    meta = {
        "kind": "vector" if vector else "scalar",
        "n": ms.n,
        "M": ms.M,
        "K": ms.K,
        "real": f.is_real,
        "omega": ms.omega.entries.tolist(),
    }
    meta.update(header or {})

    rows = f.coeffs if vector else f.coeffs[None, :]
    lines = [f"# {key}: {json.dumps(value)}" for key, value in meta.items()]
    for i in f.support:
        parts = [str(int(k)) for k in ms.modes[i]]
        for c in rows[:, i]:
            parts += [_fmt(c.real), _fmt(c.imag)]
        lines.append(" ".join(parts))

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_header(path: PathLike) -> Dict[str, Any]:
    header = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            header[key.strip()] = json.loads(value)
    return header


def load_coefficients(path: PathLike, ms: ModeSet) -> Tuple[Field, Dict[str, Any]]:
    """Read a dump back onto ms; the stored n, M and K must match"""
    header = read_header(path)
    if (header.get("n"), header.get("M"), header.get("K")) != (ms.n, ms.M, ms.K):
        raise ValueError(
            f"dump is for n={header.get('n')} M={header.get('M')} K={header.get('K')}, "
            f"mode set has n={ms.n} M={ms.M} K={ms.K}"
        )
    vector = header["kind"] == "vector"
    comps = ms.n if vector else 1
    coeffs = np.zeros((comps, ms.size), dtype=complex)
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size:
        idx = ms.index_of(data[:, :ms.M].astype(np.int64))
        values = data[:, ms.M:]
        coeffs[:, idx] = (values[:, 0::2] + 1j * values[:, 1::2]).T

    real = bool(header.get("real", True))
    field = QPVectorField(ms, coeffs, real) if vector else QPScalar(ms, coeffs[0], real)
    return field, header


def write_snapshot(u: QPVectorField, t: float, p: NormParams, path: PathLike) -> Path:
    return dump_coefficients(u, path, header={"t": t, "s": p.s, "l": p.l})


# -------------------------------------------------------------------------
# Tables and manifest
# -------------------------------------------------------------------------


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_manifest(manifest: RunManifest, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    return path


def dump_lift(lift: TorusDiffeo, path: PathLike) -> Path:
    """Dense Φ - id samples (mod 1) on the torus grid as a compressed .npz"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path,
        points_per_dim=lift.grid.points_per_dim,
        M=lift.grid.M,
        displacement=np.asarray(lift.displacement),
    )
    return path


# -------------------------------------------------------------------------
# Evaluation grids
# -------------------------------------------------------------------------


@dataclass(frozen=True)
class GridExport:
    axes: Tuple[np.ndarray, ...]
    points: np.ndarray
    values: np.ndarray


def evaluation_grid(f: Field, window: Sequence[Sequence[float]], resolution: Union[int, Sequence[int]],
                    budget: Optional[int] = None) -> GridExport:
    """Values of f on a rectangular point grid over window (not wrapped: any box in R^n)"""
    n = f.modes.n
    window = [tuple(map(float, w)) for w in window]
    if len(window) != n or any(len(w) != 2 or w[1] < w[0] for w in window):
        raise ValueError(f"window must be {n} (low, high) pairs")
    res = [int(resolution)] * n if np.isscalar(resolution) else [int(r) for r in resolution]
    if len(res) != n or min(res) < 1:
        raise ValueError(f"resolution must be a positive integer or {n} of them")

    budget = GRID_BUDGET if budget is None else budget
    total = int(np.prod(res))
    if total > budget:
        raise GridBudgetError(f"grid of {total} points exceeds the budget of {budget}")

    axes = tuple(np.linspace(lo, hi, r) for (lo, hi), r in zip(window, res))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    values = np.asarray(evaluate(f, points))
    if values.ndim == 1:
        values = values[:, None]
    return GridExport(axes=axes, points=points, values=values)


def export_grid(f: Field, window: Sequence[Sequence[float]], resolution: Union[int, Sequence[int]],
                path: PathLike, budget: Optional[int] = None) -> GridExport:
    """Write the grid as '# key: json' header lines plus a row-major CSV (coordinates, then values)"""
    grid = evaluation_grid(f, window, resolution, budget)
    n = f.modes.n
    comps = grid.values.shape[1]
    frame = pd.DataFrame(grid.points, columns=[f"x{j + 1}" for j in range(n)])
    for c in range(comps):
        column = grid.values[:, c]
        if np.iscomplexobj(column):
            frame[f"v{c + 1}_re"] = column.real
            frame[f"v{c + 1}_im"] = column.imag
        else:
            frame[f"v{c + 1}"] = column

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "window": [list(w) for w in np.asarray(window, dtype=float).tolist()],
        "resolution": [len(a) for a in grid.axes],
        "components": comps,
    }
    with open(path, "w") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {json.dumps(value)}\n")
        frame.to_csv(fh, index=False, float_format="%.17g")
    logger.info("Exported %d grid points to %s", grid.points.shape[0], path)
    return grid
