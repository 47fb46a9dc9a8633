"""Text artifacts shared by the pipeline stages.

Numbers are written with 17 significant digits so every file round-trips
exactly.  Each file starts with ``#`` header lines carrying ``key: value``
metadata (config hash, geometry hash, solver reports as JSON).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import CellGeometry
from .linsolve import SolveReport
from .microcell import CellFlow, CorrectorField

FMT = "%.17g"


class DependencyError(FileNotFoundError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"missing artifact {path} (produced by the '{stage}' stage)")
        self.path = Path(path)
        self.stage = stage


def require(path: Path, stage: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DependencyError(path, stage)
    return path


def _json(v) -> str:
    def fallback(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serialisable: {type(o).__name__}")

    return json.dumps(v, sort_keys=True, default=fallback)


def _header(meta: dict) -> str:
    return "\n".join(f"{k}: {_json(v)}" for k, v in meta.items())


def read_header(path: Path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            if value:
                try:
                    meta[key] = json.loads(value)
                except json.JSONDecodeError:
                    meta[key] = value
    return meta


def _report_dict(report) -> dict | None:
    if report is None:
        return None
    if isinstance(report, SolveReport):
        return report.as_dict()
    return report


# --- cell fields ------------------------------------------------------------


def write_corrector(path: Path, xi: CorrectorField, meta: dict) -> None:
    """Long format: one row per cell ``j, i, fluid, value, d1, d2``."""
    ny, nx = xi.values.shape
    J, I = np.mgrid[0:ny, 0:nx]
    table = np.column_stack([J.ravel(), I.ravel(), xi.mask.ravel().astype(float),
                             xi.values.ravel(), xi.gradient[..., 0].ravel(),
                             xi.gradient[..., 1].ravel()])
    head = dict(meta, kind=xi.kind, k=xi.k, shape=[ny, nx], report=_report_dict(xi.report))
    np.savetxt(path, table, fmt=["%d", "%d", "%d", FMT, FMT, FMT], delimiter=",",
               header=_header(head) + "\nj,i,fluid,value,grad1,grad2")


def read_corrector(path: Path) -> CorrectorField:
    meta = read_header(path)
    ny, nx = meta["shape"]
    t = np.loadtxt(path, delimiter=",", ndmin=2)
    mask = t[:, 2].reshape(ny, nx).astype(bool)
    grad = np.stack([t[:, 4].reshape(ny, nx), t[:, 5].reshape(ny, nx)], axis=-1)
    rep = meta.get("report")
    report = SolveReport(**rep) if rep else None
    return CorrectorField(int(meta["k"]), t[:, 3].reshape(ny, nx), grad, mask,
                          meta.get("kind", "phi"), report)


def write_flow(path: Path, flow: CellFlow, meta: dict) -> None:
    """Long format: ``j, i, fluid, u1 (west face), u2 (south face), p``."""
    ny, nx = flow.mask.shape
    J, I = np.mgrid[0:ny, 0:nx]
    table = np.column_stack([J.ravel(), I.ravel(), flow.mask.ravel().astype(float),
                             flow.u1.ravel(), flow.u2.ravel(), flow.pressure.ravel()])
    head = dict(meta, shape=[ny, nx], mu=flow.mu, force=list(flow.force), report=flow.report)
    np.savetxt(path, table, fmt=["%d", "%d", "%d", FMT, FMT, FMT], delimiter=",",
               header=_header(head) + "\nj,i,fluid,u1,u2,p")


def read_flow(path: Path) -> CellFlow:
    meta = read_header(path)
    ny, nx = meta["shape"]
    t = np.loadtxt(path, delimiter=",", ndmin=2)
    shape = (ny, nx)
    return CellFlow(t[:, 3].reshape(shape), t[:, 4].reshape(shape), t[:, 5].reshape(shape),
                    float(meta["mu"]), tuple(meta["force"]), t[:, 2].reshape(shape).astype(bool),
                    meta.get("report") or {})


def write_vtk(path: Path, cell: CellGeometry, scalars: dict, vectors: dict | None = None,
              title: str = "cell fields") -> None:
    """Legacy ASCII VTK structured-points file with cell data."""
    ny, nx = cell.mask.shape
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nx + 1} {ny + 1} 1", "ORIGIN 0 0 0",
             f"SPACING {FMT % cell.hx} {FMT % cell.hy} 1", f"CELL_DATA {nx * ny}"]
    for name, arr in scalars.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [FMT % v for v in np.asarray(arr, dtype=float).ravel()]
    for name, arr in (vectors or {}).items():
        lines.append(f"VECTORS {name} double")
        a = np.asarray(arr, dtype=float).reshape(-1, 2)
        lines += [f"{FMT % x} {FMT % y} 0" for x, y in a]
    Path(path).write_text("\n".join(lines) + "\n")


# --- tensor report ----------------------------------------------------------


def write_report(path: Path, values: dict, meta: dict) -> None:
    """``quantity,value`` rows; numeric values with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {_json(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for k, v in values.items():
            w.writerow([k, FMT % v if isinstance(v, (float, np.floating, int)) else v])


def read_report(path: Path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header != ["quantity", "value"]:
            raise ValueError(f"{path}: not a tensor report")
        for row in rows:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: malformed row {row}")
            try:
                out[row[0]] = float(row[1])
            except ValueError:
                out[row[0]] = row[1]
    return out


# --- macro output -----------------------------------------------------------


def write_field(path: Path, phi: np.ndarray, meta: dict) -> None:
    np.savetxt(path, phi, fmt=FMT, delimiter=",", header=_header(meta))


def read_field(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_polylines(path: Path, lines: list, meta: dict) -> None:
    rows = [(n, x, y) for n, pts in enumerate(lines) for x, y in pts]
    table = np.array(rows, dtype=float).reshape(-1, 3)
    np.savetxt(path, table, fmt=["%d", FMT, FMT], delimiter=",",
               header=_header(meta) + "\nline,X,Y")


def write_series(path: Path, series: list, columns: list[str], meta: dict) -> None:
    table = np.array(series, dtype=float).reshape(-1, len(columns))
    np.savetxt(path, table, fmt=FMT, delimiter=",", header=_header(meta) + "\n" + ",".join(columns))
