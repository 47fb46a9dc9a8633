"""Pipeline configuration: section-based ``key = value`` text.

Every key has a default, so an empty file gives the reference setup
(0.46-porosity wavy channel, Pe_mic = 0.04, unit mobility, 35 x 50 cell
macroscopic domain with dX = 0.01).  Keys are unique across sections, which
lets short configs omit the section header altogether::

    pe_mic = 0.04

    [macro]
    t_end = 0.004
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


_SECTIONS = {
    "geometry": ["kind", "amplitude", "cross_section", "radius", "resolution", "mask_file"],
    "cell": ["mobility", "cell_lam", "corrector_tol", "w_velocity_source"],
    "stokes": ["mu", "force", "stokes_tol"],
    "physics": ["pe_mic", "g_tilde0", "h_tilde0"],
    "energy": ["lam", "eta"],
    "macro": ["cells_x", "cells_y", "points_per_cell", "dx", "mode", "inlet_flux",
              "inlet_contrast", "rk_tol", "t_end", "output_every", "dt_max",
              "front_x0", "front_amplitude", "front_wavelength", "max_steps"],
}
_OWNER = {k: s for s, keys in _SECTIONS.items() for k in keys}

_PARSERS = {
    "kind": str, "amplitude": float, "cross_section": float, "radius": float,
    "resolution": int, "mask_file": str,
    "mobility": _floats, "cell_lam": float, "corrector_tol": float, "w_velocity_source": _bool,
    "mu": float, "force": _floats, "stokes_tol": float,
    "pe_mic": float, "g_tilde0": float, "h_tilde0": float,
    "lam": float, "eta": _opt_float,
    "cells_x": int, "cells_y": int, "points_per_cell": int, "dx": float, "mode": str,
    "inlet_flux": float, "inlet_contrast": float, "rk_tol": float, "t_end": float,
    "output_every": float, "dt_max": _opt_float, "front_x0": _opt_float,
    "front_amplitude": _opt_float, "front_wavelength": _opt_float, "max_steps": int,
}


@dataclass(frozen=True)
class PipelineConfig:
    # geometry
    kind: str = "channel"
    amplitude: float = 0.10
    cross_section: float = 0.46
    radius: float = 0.3
    resolution: int = 128
    mask_file: str = ""
    # cell problems
    mobility: tuple = (1.0, 0.0, 0.0, 1.0)
    cell_lam: float = 1.0
    corrector_tol: float = 1e-10
    w_velocity_source: bool = False
    # Stokes
    mu: float = 1.0
    force: tuple = (1.0, 0.0)
    stokes_tol: float = 1e-10
    # physics
    pe_mic: float = 0.04
    g_tilde0: float = 0.0
    h_tilde0: float = 0.0
    # free energy
    lam: float = 1e-3
    eta: float | None = None
    # macroscopic problem
    cells_x: int = 50
    cells_y: int = 35
    points_per_cell: int = 4
    dx: float = 0.01
    mode: str = "inlet"
    inlet_flux: float = 1.0
    inlet_contrast: float = 1.0
    rk_tol: float = 1e-4
    t_end: float = 0.012
    output_every: float = 0.002
    dt_max: float | None = None
    front_x0: float | None = 0.05
    front_amplitude: float | None = 0.01
    front_wavelength: float | None = None
    max_steps: int = 1_000_000

    @property
    def mobility_matrix(self):
        import numpy as np

        return np.array(self.mobility, dtype=float).reshape(2, 2)

    @property
    def macro_shape(self) -> tuple[int, int]:
        """``(ny, nx)`` of the macroscopic grid."""
        return self.cells_y * self.points_per_cell, self.cells_x * self.points_per_cell

    @property
    def eta_value(self) -> float:
        return self.eta if self.eta is not None else 2.0 * self.dx

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of the resolved configuration (independent of formatting)."""
        text = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        out = []
        for section, keys in _SECTIONS.items():
            out.append(f"[{section}]")
            for k in keys:
                v = getattr(self, k)
                if isinstance(v, tuple):
                    v = ", ".join(repr(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                elif v is None:
                    v = "auto"
                elif isinstance(v, float):
                    v = repr(v)
                out.append(f"{k} = {v}")
            out.append("")
        return "\n".join(out)


def _validate(cfg: PipelineConfig) -> list[tuple[str, str]]:
    """Return ``(key, message)`` for every out-of-range value."""
    bad = []

    def need(ok, key, msg):
        if not ok:
            bad.append((key, msg))

    need(cfg.kind in ("channel", "obstacle", "empty", "file"), "kind",
         "kind must be channel, obstacle, empty or file")
    need(cfg.kind != "file" or cfg.mask_file, "mask_file", "kind = file needs mask_file")
    need(cfg.amplitude >= 0, "amplitude", "amplitude must be >= 0")
    need(0 < cfg.cross_section <= 1, "cross_section", "cross_section must be in (0, 1]")
    need(cfg.kind != "channel" or cfg.amplitude + cfg.cross_section <= 1, "amplitude",
         "amplitude + cross_section must be <= 1")
    need(0 < cfg.radius < 0.5, "radius", "radius must be in (0, 0.5)")
    need(cfg.resolution >= 16, "resolution", "resolution must be >= 16")
    need(len(cfg.mobility) == 4, "mobility", "mobility needs four entries m11, m12, m21, m22")
    if len(cfg.mobility) == 4:
        import numpy as np

        m = cfg.mobility_matrix
        ok = np.allclose(m, m.T) and np.all(np.linalg.eigvalsh(0.5 * (m + m.T)) > 0)
        need(ok, "mobility", "mobility must be symmetric positive definite")
    need(cfg.cell_lam > 0, "cell_lam", "cell_lam must be > 0")
    need(len(cfg.force) == 2, "force", "force needs two components")
    need(cfg.mu > 0, "mu", "mu must be > 0")
    for key in ("corrector_tol", "stokes_tol", "rk_tol"):
        need(getattr(cfg, key) > 0, key, f"{key} must be > 0")
    need(cfg.pe_mic >= 0, "pe_mic", "pe_mic must be >= 0")
    need(cfg.lam > 0, "lam", "lam must be > 0")
    need(cfg.eta is None or cfg.eta > 0, "eta", "eta must be > 0")
    for key in ("cells_x", "cells_y", "points_per_cell"):
        need(getattr(cfg, key) >= 1, key, f"{key} must be >= 1")
    need(cfg.macro_shape[1] >= 4 and cfg.macro_shape[0] >= 2, "cells_x", "macro grid too small")
    need(cfg.dx > 0, "dx", "dx must be > 0")
    need(cfg.mode in ("periodic", "inlet"), "mode", "mode must be periodic or inlet")
    need(cfg.inlet_flux >= 0, "inlet_flux", "inlet_flux must be >= 0")
    need(0 <= cfg.inlet_contrast <= 1, "inlet_contrast", "inlet_contrast must be in [0, 1]")
    need(cfg.t_end >= 0, "t_end", "t_end must be >= 0")
    need(cfg.output_every >= 0, "output_every", "output_every must be >= 0")
    need(cfg.dt_max is None or cfg.dt_max > 0, "dt_max", "dt_max must be > 0")
    need(cfg.max_steps >= 1, "max_steps", "max_steps must be >= 1")
    for key in ("amplitude", "cross_section", "radius", "dx", "t_end", "lam"):
        need(math.isfinite(getattr(cfg, key)), key, f"{key} must be finite")
    return bad


def _key_lines(lines: list[str]) -> dict[tuple[str, str], int]:
    """Map ``(section, key)`` to its 1-based line number."""
    where = {}
    section = "__top__"
    for n, raw in enumerate(lines, start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m:
            where.setdefault((section, m.group(1).strip().lower()), n)
    return where


def parse_config(text: str) -> PipelineConfig:
    """Parse configuration text; omitted keys take their defaults."""
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                       inline_comment_prefixes=("#", ";"))
    try:
        # a synthetic header (line 0) holds keys written before any section
        parser.read_string("[__top__]\n" + text)
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        raise ConfigError(f"malformed line {content}", line - 1) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno - 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno - 1) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}",
                          None if line is None else line - 1) from None
    where = _key_lines(lines)
    values = {}
    origin = {}
    for section in parser.sections():
        if section != "__top__" and section not in _SECTIONS:
            line = next((n for n, raw in enumerate(lines, 1)
                         if raw.strip().lower() == f"[{section}]"), None)
            raise ConfigError(f"unknown section [{section}]", line)
        for key, raw in parser.items(section):
            line = where.get((section, key))
            owner = _OWNER.get(key)
            if owner is None or (section != "__top__" and owner != section):
                hint = f" (belongs in [{owner}])" if owner else ""
                raise ConfigError(f"unknown key {key!r} in [{section.strip('_')}]{hint}", line)
            if key in values:
                raise ConfigError(f"duplicate key {key!r}", line)
            try:
                values[key] = _PARSERS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", line) from None
            origin[key] = line
    cfg = PipelineConfig(**values)
    bad = _validate(cfg)
    if bad:
        key, msg = bad[0]
        raise ConfigError(f"out of range: {msg}", origin.get(key))
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def config_fields() -> list[str]:
    return [f.name for f in fields(PipelineConfig)]
