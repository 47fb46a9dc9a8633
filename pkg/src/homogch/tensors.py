"""Effective macroscopic tensors from cell-problem solutions.

All quadratures are node-wise midpoint sums over the fluid volumes,
normalised by the total cell measure ``|Y| = 1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import CellGeometry
from .microcell import CellFlow, CorrectorField


@dataclass
class EffectiveTensors:
    D: np.ndarray
    C: np.ndarray
    M_phi: np.ndarray
    M_w: np.ndarray
    v: np.ndarray
    porosity: float
    pe_mic: float = 0.0
    g_tilde0: float = 0.0
    h_tilde0: float = 0.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("D", "C", "M_phi", "M_w"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2, 2))
        self.v = np.asarray(self.v, dtype=float).reshape(2)

    @classmethod
    def isotropic(cls, d: float = 1.0, m: float = 1.0, c: float = 0.0,
                  porosity: float = 1.0, **kw) -> "EffectiveTensors":
        eye = np.eye(2)
        return cls(D=d * eye, C=c * eye, M_phi=m * d * eye, M_w=m * d * eye,
                   v=np.zeros(2), porosity=porosity, **kw)

    def as_flat(self) -> dict:
        out = {"porosity": self.porosity, "pe_mic": self.pe_mic,
               "g_tilde0": self.g_tilde0, "h_tilde0": self.h_tilde0,
               "v1": self.v[0], "v2": self.v[1]}
        for name in ("D", "C", "M_phi", "M_w"):
            M = getattr(self, name)
            for i in range(2):
                for k in range(2):
                    out[f"{name}_{i + 1}{k + 1}"] = float(M[i, k])
        return out


def _check(cell: CellGeometry, correctors) -> list[CorrectorField]:
    xs = sorted(correctors, key=lambda c: c.k)
    if [c.k for c in xs] != [1, 2]:
        raise ValueError("dimension mismatch: need correctors for k = 1 and k = 2")
    for c in xs:
        if c.values.shape != cell.mask.shape or not np.array_equal(c.mask, cell.mask):
            raise ValueError("dimension mismatch: corrector does not belong to this cell")
    return xs


def mean_gradient(correctors, cell: CellGeometry) -> np.ndarray:
    """``G[j, k] = (1/|Y|) int_{Y1} d xi^k / d y_j``."""
    xs = _check(cell, correctors)
    area = cell.hx * cell.hy
    G = np.zeros((2, 2))
    for c in xs:
        for j in range(2):
            G[j, c.k - 1] = c.gradient[..., j][cell.mask].sum() * area
    return G


def tensor_D(correctors, cell: CellGeometry) -> np.ndarray:
    """``d_ik = (1/|Y|) int_{Y1} (delta_ik - d xi^k / d y_i)``."""
    return cell.porosity * np.eye(2) - mean_gradient(correctors, cell)


def tensor_M(mobility, correctors, cell: CellGeometry) -> np.ndarray:
    """``m_ik = (1/|Y|) sum_j int_{Y1} (m_ik - m_ij d xi^k / d y_j)``."""
    m = np.asarray(mobility, dtype=float).reshape(2, 2)
    return cell.porosity * m - m @ mean_gradient(correctors, cell)


def tensor_C(flow: CellFlow, v, correctors, pe_mic: float, cell: CellGeometry) -> np.ndarray:
    """Dispersion correction ``c_kk = Pe/|Y| int_{Y1} (u^k - <u^k>) xi^k``.

    ``v`` is the Pe-scaled drift; the fluctuation inside the integral uses
    the plain fluid mean of ``u`` so that ``Pe`` enters once.  Off-diagonal
    entries vanish by definition.
    """
    xs = _check(cell, correctors)
    if flow.mask.shape != cell.mask.shape:
        raise ValueError("dimension mismatch: flow does not belong to this cell")
    mean_u = flow.fluid_mean()
    v = np.asarray(v, dtype=float)
    if pe_mic > 0 and not np.allclose(v, pe_mic * mean_u, rtol=1e-9, atol=1e-15):
        raise ValueError("drift velocity is inconsistent with the supplied flow and pe_mic")
    uc = flow.centered()
    area = cell.hx * cell.hy
    C = np.zeros((2, 2))
    for c in xs:
        k = c.k - 1
        fluct = uc[..., k][cell.mask] - mean_u[k]
        C[k, k] = pe_mic * float(fluct @ c.values[cell.mask]) * area
    return C


def effective_wetting(g_tilde0: float | None = None, h_tilde0: float | None = None) -> tuple[float, float]:
    """Wetting constants, taken from configuration (neutral wetting by default)."""
    return (0.0 if g_tilde0 is None else float(g_tilde0),
            0.0 if h_tilde0 is None else float(h_tilde0))


def assemble(cell: CellGeometry, xi_phi, xi_w, flow: CellFlow, mobility, pe_mic: float,
             g_tilde0: float = 0.0, h_tilde0: float = 0.0) -> EffectiveTensors:
    from .microcell import drift_velocity

    v = drift_velocity(flow, pe_mic, cell)
    g0, h0 = effective_wetting(g_tilde0, h_tilde0)
    return EffectiveTensors(
        D=tensor_D(xi_phi, cell),
        C=tensor_C(flow, v, xi_phi, pe_mic, cell),
        M_phi=tensor_M(mobility, xi_phi, cell),
        M_w=tensor_M(mobility, xi_w, cell),
        v=v, porosity=cell.porosity, pe_mic=pe_mic, g_tilde0=g0, h_tilde0=h0,
        notes={"C_fluctuation": "u - <u>_Y1 with a single Pe_mic prefactor"},
    )
