"""File-staged pipeline: cell -> stokes -> tensors -> macro.

Each stage reads the configuration plus the artifacts of earlier stages
from the output directory and writes its own artifacts before returning,
so any stage can be re-run on its own.
"""

from __future__ import annotations

import logging
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io
from .config import PipelineConfig
from .energy import double_well
from .geometry import (
    CellGeometry,
    GeometryError,
    build_channel_cell,
    build_obstacle_cell,
    empty_cell,
    load_mask,
    save_mask,
)
from .linsolve import IterationLimitError, SolverError
from .macro import INLET, MacroConfig, diagnostics, interface_position, run
from .microcell import (
    BlockedGeometryWarning,
    solve_corrector_phi,
    solve_corrector_w,
    solve_periodic_stokes,
)
from .tensors import EffectiveTensors, assemble

log = logging.getLogger(__name__)

MASK = "mask.txt"
FLOW = "flow.csv"
REPORT = "tensor_report.csv"
DIAGNOSTICS = "diagnostics.csv"
SERIES_COLUMNS = ["t", "dt", "err", "mass", "energy", "front", "modulation"]


def corrector_file(kind: str, k: int) -> str:
    return f"corrector_{kind}_{k}.csv"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, report=None):
        text = f"stage '{stage}' failed: {message}"
        if report is not None:
            text += f" [solver report: {report}]"
        super().__init__(text)
        self.stage = stage
        self.report = report


def _meta(cfg: PipelineConfig, cell: CellGeometry | None = None, **extra) -> dict:
    meta = {"config_hash": cfg.digest()}
    if cell is not None:
        meta["geometry_hash"] = cell.digest()
    meta.update(extra)
    return meta


def build_geometry(cfg: PipelineConfig) -> CellGeometry:
    if cfg.kind == "channel":
        return build_channel_cell(cfg.amplitude, cfg.cross_section, cfg.resolution)
    if cfg.kind == "obstacle":
        return build_obstacle_cell(cfg.radius, cfg.resolution)
    if cfg.kind == "empty":
        return empty_cell(cfg.resolution)
    return load_mask(cfg.mask_file, name=Path(cfg.mask_file).stem)


@contextmanager
def _guard(stage: str):
    """Re-raise solver and geometry failures as a ``StageError``."""
    try:
        yield
    except (StageError, io.DependencyError):
        raise
    except IterationLimitError as exc:
        raise StageError(stage, str(exc), exc.report.as_dict()) from exc
    except (SolverError, GeometryError, ValueError, FloatingPointError) as exc:
        raise StageError(stage, str(exc)) from exc


def _load_cell(out: Path) -> CellGeometry:
    return load_mask(io.require(out / MASK, "cell"), name="mask")


# ---------------------------------------------------------------------------
# stages


def stage_cell(cfg: PipelineConfig, out: Path) -> dict:
    """Geometry and the correctors ``xi_phi^k``, ``xi_w^k`` for k = 1, 2."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with _guard("cell"):
        cell = build_geometry(cfg)
        meta = _meta(cfg, cell)
        save_mask(cell, out / MASK, meta)
        m = cfg.mobility_matrix
        reports = {}
        scalars = {"fluid": cell.mask.astype(float)}
        for k in (1, 2):
            xi = solve_corrector_phi(cell, k, tol=cfg.corrector_tol)
            io.write_corrector(out / corrector_file("phi", k), xi, meta)
            xw = solve_corrector_w(cell, k, m, cfg.cell_lam, xi, tol=cfg.corrector_tol)
            io.write_corrector(out / corrector_file("w", k), xw, meta)
            reports[f"xi_phi_{k}"] = xi.report.as_dict()
            reports[f"xi_w_{k}"] = xw.report.as_dict()
            scalars[f"xi_phi_{k}"] = xi.values
            scalars[f"xi_w_{k}"] = xw.values
        io.write_vtk(out / "correctors.vtk", cell, scalars, title=f"correctors {meta['config_hash']}")
    log.info("cell: porosity %.6f, %d fluid cells", cell.porosity, cell.n_fluid)
    return reports


def stage_stokes(cfg: PipelineConfig, out: Path) -> dict:
    """Periodic Stokes flow on the stored mask."""
    out = Path(out)
    cell = _load_cell(out)
    with _guard("stokes"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BlockedGeometryWarning)
            flow = solve_periodic_stokes(cell, mu=cfg.mu, force=cfg.force, tol=cfg.stokes_tol)
        notes = [str(w.message) for w in caught if issubclass(w.category, BlockedGeometryWarning)]
        for n in notes:
            log.warning("stokes: %s", n)
        flow.report["warnings"] = notes
        meta = _meta(cfg, cell)
        io.write_flow(out / FLOW, flow, meta)
        io.write_vtk(out / "flow.vtk", cell, {"fluid": cell.mask.astype(float),
                                              "pressure": flow.pressure},
                     vectors={"velocity": flow.centered()}, title=f"flow {meta['config_hash']}")
    return flow.report


def stage_tensors(cfg: PipelineConfig, out: Path) -> EffectiveTensors:
    """Effective tensors from stored correctors and flow; writes the report."""
    out = Path(out)
    cell = _load_cell(out)
    paths = {(kind, k): io.require(out / corrector_file(kind, k), "cell")
             for kind in ("phi", "w") for k in (1, 2)}
    flow_path = io.require(out / FLOW, "stokes")
    with _guard("tensors"):
        for p in list(paths.values()) + [flow_path]:
            if io.read_header(p).get("geometry_hash") != cell.digest():
                raise ValueError(f"stale artifact {p}: geometry differs from {MASK}")
        xs = {key: io.read_corrector(p) for key, p in paths.items()}
        flow = io.read_flow(flow_path)
        xi_phi = [xs["phi", 1], xs["phi", 2]]
        xi_w = [xs["w", 1], xs["w", 2]]
        notes = "w correctors without velocity source"
        if cfg.w_velocity_source:
            xi_w = [solve_corrector_w(cell, k, cfg.mobility_matrix, cfg.cell_lam, xi_phi[k - 1],
                                      tol=cfg.corrector_tol, flow=flow, pe_mic=cfg.pe_mic)
                    for k in (1, 2)]
            notes = "w correctors with experimental velocity-fluctuation source"
        T = assemble(cell, xi_phi, xi_w, flow, cfg.mobility_matrix, cfg.pe_mic,
                     cfg.g_tilde0, cfg.h_tilde0)
        values = T.as_flat()
        values["n_fluid"] = cell.n_fluid
        values["resolution_x"] = cell.nx
        values["resolution_y"] = cell.ny
        residuals = {f"{kind}_{k}": xs[kind, k].report.as_dict() if xs[kind, k].report else None
                     for kind, k in xs}
        schur = flow.report.get("schur", {})
        residuals["stokes"] = {"schur": schur, "max_div": flow.report.get("max_div", 0.0)}
        meta = _meta(cfg, cell, corrector_headers={f"{kind}_{k}": io.read_header(p)["config_hash"]
                                                   for (kind, k), p in paths.items()},
                     residuals=residuals, notes=notes)
        io.write_report(out / REPORT, values, meta)
    log.info("tensors: D = %s, C = %s", T.D.tolist(), T.C.tolist())
    return T


def tensors_from_report(values: dict) -> EffectiveTensors:
    def mat(name):
        return [[values[f"{name}_{i}{k}"] for k in (1, 2)] for i in (1, 2)]

    try:
        return EffectiveTensors(D=mat("D"), C=mat("C"), M_phi=mat("M_phi"), M_w=mat("M_w"),
                                v=[values["v1"], values["v2"]], porosity=values["porosity"],
                                pe_mic=values.get("pe_mic", 0.0),
                                g_tilde0=values.get("g_tilde0", 0.0),
                                h_tilde0=values.get("h_tilde0", 0.0))
    except KeyError as exc:
        raise ValueError(f"tensor report lacks {exc.args[0]}") from None


def macro_config(cfg: PipelineConfig, tensors: EffectiveTensors) -> MacroConfig:
    ny, nx = cfg.macro_shape
    fe = double_well(cfg.eta_value, lam=cfg.lam)
    return MacroConfig(tensors, fe, nx=nx, ny=ny, dx=cfg.dx, mode=cfg.mode,
                       inlet_flux=cfg.inlet_flux, inlet_contrast=cfg.inlet_contrast,
                       cell_points=cfg.points_per_cell, rk_tol=cfg.rk_tol, t_end=cfg.t_end,
                       output_every=cfg.output_every, dt_max=cfg.dt_max,
                       front_x0=cfg.front_x0, front_amplitude=cfg.front_amplitude,
                       front_wavelength=cfg.front_wavelength, max_steps=cfg.max_steps)


def stage_macro(cfg: PipelineConfig, out: Path):
    """Integrate the upscaled equation with the tensors from the report."""
    out = Path(out)
    report_path = io.require(out / REPORT, "tensors")
    with _guard("macro"):
        values = io.read_report(report_path)
        tensors = tensors_from_report(values)
        mc = macro_config(cfg, tensors)
        if mc.mode == INLET and np.allclose(tensors.D, 0.0):
            raise ValueError("effective diffusion vanishes; the macroscopic problem is degenerate")
        traj = run(mc)
    mdir = out / "macro"
    mdir.mkdir(exist_ok=True)
    meta = _meta(cfg, report_hash=io.read_header(report_path).get("config_hash"))
    for n, (t, phi) in enumerate(zip(traj.times, traj.snapshots)):
        snap = dict(meta, time=t, dx=cfg.dx)
        io.write_field(mdir / f"phi_{n:04d}.csv", phi, snap)
        lines = interface_position(phi, cfg.dx, periodic_x=mc.mode != INLET)
        io.write_polylines(mdir / f"interface_{n:04d}.csv", lines, snap)
    io.write_series(out / DIAGNOSTICS, traj.series, SERIES_COLUMNS,
                    dict(meta, error=None if traj.error is None else str(traj.error)))
    if traj.error is not None:
        raise StageError("macro", str(traj.error),
                         {"time": traj.times[-1], "steps": len(traj.series) - 1})
    d = diagnostics(traj.final, mc)
    log.info("macro: t = %.6g, front %.6g, modulation %.6g", traj.times[-1],
             d.front_position, d.modulation)
    return traj


STAGES = {
    "cell": stage_cell,
    "stokes": stage_stokes,
    "tensors": stage_tensors,
    "macro": stage_macro,
}


def run_pipeline(cfg: PipelineConfig, out: Path) -> None:
    for name, stage in STAGES.items():
        log.info("running stage %s", name)
        stage(cfg, out)
