"""Reference-cell solvers: Laplace correctors and periodic Stokes flow.

Both problems are discretised by finite volumes on the cell mask.
Correctors live at fluid cell centres; the Stokes velocity lives on a
staggered (MAC) layout with ``u1`` on vertical faces and ``u2`` on
horizontal faces, pressure at cell centres.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CellGeometry, GeometryError, face_arrays, percolates
from .linsolve import SolveReport, SparseOperator, solve_spd

log = logging.getLogger(__name__)


class BlockedGeometryWarning(UserWarning):
    pass


@dataclass
class CorrectorField:
    k: int
    values: np.ndarray  # (ny, nx), zero in the solid
    gradient: np.ndarray  # (ny, nx, 2), zero in the solid
    mask: np.ndarray
    kind: str = "phi"
    report: SolveReport | None = None

    def fluid_mean(self) -> float:
        return float(self.values[self.mask].mean())


@dataclass
class CellFlow:
    u1: np.ndarray  # (ny, nx) on faces x = i*h, zero where inactive
    u2: np.ndarray  # (ny, nx) on faces y = j*h
    pressure: np.ndarray  # (ny, nx), mean-zero over fluid, zero in solid
    mu: float
    force: tuple[float, float]
    mask: np.ndarray
    report: dict = field(default_factory=dict)

    @property
    def ny(self) -> int:
        return self.mask.shape[0]

    @property
    def nx(self) -> int:
        return self.mask.shape[1]

    def centered(self) -> np.ndarray:
        """Velocity averaged to cell centres, shape ``(ny, nx, 2)``."""
        c1 = 0.5 * (self.u1 + np.roll(self.u1, -1, axis=1))
        c2 = 0.5 * (self.u2 + np.roll(self.u2, -1, axis=0))
        out = np.stack([c1, c2], axis=-1)
        out[~self.mask] = 0.0
        return out

    def fluid_mean(self) -> np.ndarray:
        """Mean velocity over the fluid volume."""
        n = self.mask.sum()
        if n == 0:
            return np.zeros(2)
        return np.array([self.u1.sum() / n, self.u2.sum() / n])

    def divergence(self) -> np.ndarray:
        h1, h2 = 1.0 / self.nx, 1.0 / self.ny
        div = (np.roll(self.u1, -1, axis=1) - self.u1) / h1 + (np.roll(self.u2, -1, axis=0) - self.u2) / h2
        div[~self.mask] = 0.0
        return div


# ---------------------------------------------------------------------------
# correctors


def _dof_index(mask: np.ndarray) -> np.ndarray:
    idx = -np.ones(mask.shape, dtype=int)
    idx[mask] = np.arange(int(mask.sum()))
    return idx


def _fluid_edges(mask: np.ndarray):
    """Fluid-fluid edges to the east (axis 1) and north (axis 0) neighbour."""
    east = mask & np.roll(mask, -1, axis=1)
    north = mask & np.roll(mask, -1, axis=0)
    return east, north


def neumann_laplacian(cell: CellGeometry) -> SparseOperator:
    """Graph Laplacian of the fluid volumes, weighted by face length / spacing.

    Positive semidefinite with the constants as kernel.
    """
    mask = cell.mask
    idx = _dof_index(mask)
    east, north = _fluid_edges(mask)
    w1 = cell.hy / cell.hx
    w2 = cell.hx / cell.hy
    rows, cols, vals = [], [], []
    for edges, shift, w in ((east, (0, -1), w1), (north, (-1, 0), w2)):
        a = idx[edges]
        b = np.roll(idx, shift, axis=(0, 1))[edges]
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [np.full(a.size, w), np.full(a.size, w), np.full(a.size, -w), np.full(a.size, -w)]
    n = int(mask.sum())
    if rows:
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        A = sp.csr_matrix((n, n))
    return SparseOperator(A, symmetric=True, singular=True)


def _check_cell(cell: CellGeometry) -> None:
    if cell.n_fluid == 0:
        raise GeometryError("degenerate geometry: cell contains no fluid")


def _face_difference_gradient(cell: CellGeometry, values: np.ndarray,
                              wall_gradient) -> np.ndarray:
    """Node gradient as the mean of the two face gradients per direction.

    ``wall_gradient(direction, sign)`` returns an ``(ny, nx)`` array with the
    imposed derivative along ``direction`` on a solid face whose outward
    normal is ``sign * e_direction``.
    """
    mask = cell.mask
    grad = np.zeros(mask.shape + (2,))
    for d, (axis, h) in enumerate(((1, cell.hx), (0, cell.hy))):
        plus_nb = np.roll(mask, -1, axis=axis)
        minus_nb = np.roll(mask, 1, axis=axis)
        fwd = (np.roll(values, -1, axis=axis) - values) / h
        bwd = (values - np.roll(values, 1, axis=axis)) / h
        fwd = np.where(plus_nb, fwd, wall_gradient(d, +1))
        bwd = np.where(minus_nb, bwd, wall_gradient(d, -1))
        grad[..., d] = np.where(mask, 0.5 * (fwd + bwd), 0.0)
    return grad


def solve_corrector_phi(cell: CellGeometry, k: int, tol: float = 1e-10,
                        max_iter: int | None = None) -> CorrectorField:
    """Corrector for a unit macroscopic gradient along ``e_k`` (``k`` in {1, 2}).

    Solves ``Laplace(xi) = 0`` in the fluid with ``n . grad(xi) = n_k`` on
    the staircase walls, periodic, mean-zero over the fluid.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    _check_cell(cell)
    op = neumann_laplacian(cell)
    idx = _dof_index(cell.mask)
    flat, normals = face_arrays(cell)
    rhs = np.zeros(op.dimension)
    if flat.size:
        length = np.where(normals[:, 0] != 0, cell.hy, cell.hx)
        owner = idx.ravel()[flat]
        np.add.at(rhs, owner, normals[:, k - 1] * length)
    x, report = solve_spd(op, rhs, tol=tol, max_iter=max_iter)
    values = np.zeros(cell.mask.shape)
    values[cell.mask] = x

    def wall(d, sign):
        # n . grad xi = n_k with n = sign e_d  =>  d_d xi = delta_{kd}
        return np.full(cell.mask.shape, 1.0 if d == k - 1 else 0.0)

    grad = _face_difference_gradient(cell, values, wall)
    return CorrectorField(k, values, grad, cell.mask, "phi", report)


def _face_average(a: np.ndarray, axis: int) -> np.ndarray:
    return 0.5 * (a + np.roll(a, -1, axis=axis))


def solve_corrector_w(cell: CellGeometry, k: int, mobility: np.ndarray, lam: float,
                      xi_phi: CorrectorField, tol: float = 1e-10,
                      max_iter: int | None = None, flow: CellFlow | None = None,
                      pe_mic: float = 0.0) -> CorrectorField:
    """Corrector ``xi_w^k`` for the chemical-potential flux.

    Conservative form ``div(e_k - grad xi_w + lam * m (e_k - grad xi_phi)) = 0``
    with zero normal total flux on the walls.  Passing ``flow`` adds the
    experimental velocity-fluctuation source ``pe_mic * (u_k - <u_k>)``.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if xi_phi.k != k or xi_phi.mask.shape != cell.mask.shape:
        raise ValueError("xi_phi does not match the requested cell/direction")
    m = np.asarray(mobility, dtype=float)
    if m.shape != (2, 2) or not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
        raise ValueError("mobility must be a symmetric positive definite 2x2 matrix")
    _check_cell(cell)
    mask = cell.mask
    ek = np.array([1.0 if k == 1 else 0.0, 1.0 if k == 2 else 0.0])
    op = neumann_laplacian(cell)
    idx = _dof_index(mask)
    xi = xi_phi.values
    gphi = xi_phi.gradient

    # known flux part F0 = e_k + lam * m (e_k - grad xi_phi) on fluid-fluid faces
    east, north = _fluid_edges(mask)
    rhs_grid = np.zeros(mask.shape)
    for d, (axis, h, length, edges) in enumerate(((1, cell.hx, cell.hy, east),
                                                   (0, cell.hy, cell.hx, north))):
        normal_deriv = (np.roll(xi, -1, axis=axis) - xi) / h
        tang = 1 - d
        tang_deriv = _face_average(gphi[..., tang], axis)
        grad_face = np.zeros(mask.shape + (2,))
        grad_face[..., d] = normal_deriv
        grad_face[..., tang] = tang_deriv
        q = (m[d, 0] * (ek[0] - grad_face[..., 0]) + m[d, 1] * (ek[1] - grad_face[..., 1]))
        F0 = np.where(edges, ek[d] + lam * q, 0.0) * length
        # outflow of owner, inflow of neighbour
        rhs_grid -= F0
        rhs_grid += np.roll(F0, 1, axis=axis)
    if flow is not None and pe_mic:
        uc = flow.centered()[..., k - 1]
        fluct = np.where(mask, uc - uc[mask].mean(), 0.0)
        rhs_grid += pe_mic * fluct * cell.hx * cell.hy
    rhs = rhs_grid[mask]
    x, report = solve_spd(op, rhs, tol=tol, max_iter=max_iter)
    values = np.zeros(mask.shape)
    values[mask] = x

    def wall(d, sign):
        # zero total normal flux: d_d xi_w = delta_kd + lam * q_d at the wall
        tang = 1 - d
        g = np.zeros(mask.shape + (2,))
        g[..., d] = ek[d]
        g[..., tang] = gphi[..., tang]
        q = m[d, 0] * (ek[0] - g[..., 0]) + m[d, 1] * (ek[1] - g[..., 1])
        return ek[d] + lam * q

    grad = _face_difference_gradient(cell, values, wall)
    return CorrectorField(k, values, grad, mask, "w", report)


# ---------------------------------------------------------------------------
# periodic Stokes


def _stokes_operators(mask: np.ndarray, mu: float):
    ny, nx = mask.shape
    h1, h2 = 1.0 / nx, 1.0 / ny
    west = np.roll(mask, 1, axis=1)
    south = np.roll(mask, 1, axis=0)
    active = (mask & west, mask & south)  # u1 faces (west of cell), u2 faces (south)
    blocks = []
    for comp, act in enumerate(active):
        idx = _dof_index(act)
        n = int(act.sum())
        diag = np.zeros(act.shape)
        rows, cols, vals = [], [], []
        for axis, h in ((1, h1), (0, h2)):
            # neighbour across the face normal to this component is a wall at
            # distance h; tangential neighbours are walls at h/2 (ghost reflection)
            normal = (axis == 1 and comp == 0) or (axis == 0 and comp == 1)
            wall_coef = 1.0 if normal else 2.0
            for s in (-1, 1):
                nb = np.roll(act, s, axis=axis)
                nb_idx = np.roll(idx, s, axis=axis)
                both = act & nb
                diag += np.where(act, np.where(nb, 1.0, wall_coef), 0.0) * mu / h**2
                rows.append(idx[both])
                cols.append(nb_idx[both])
                vals.append(np.full(int(both.sum()), -mu / h**2))
        rows.append(idx[act])
        cols.append(idx[act])
        vals.append(diag[act])
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        blocks.append((act, idx, A))

    pidx = _dof_index(mask)
    npres = int(mask.sum())
    grads = []
    for comp, (act, idx, _) in enumerate(blocks):
        axis, h = (1, h1) if comp == 0 else (0, h2)
        own = pidx[act]
        other = np.roll(pidx, 1, axis=axis)[act]
        n = int(act.sum())
        r = np.arange(n)
        G = sp.coo_matrix((np.concatenate([np.full(n, 1.0 / h), np.full(n, -1.0 / h)]),
                           (np.concatenate([r, r]), np.concatenate([own, other]))),
                          shape=(n, npres)).tocsr()
        grads.append(G)
    return blocks, grads


def solve_periodic_stokes(cell: CellGeometry, mu: float = 1.0, force=(1.0, 0.0),
                          tol: float = 1e-10) -> CellFlow:
    """Periodic Stokes flow driven by a constant body force.

    ``-mu Lap u + grad p = force``, ``div u = 0`` in the fluid, ``u = 0`` on
    the walls, periodic ``u`` and ``p``.  The pressure is obtained by
    conjugate gradients on the Schur complement ``G^T A^-1 G`` (an
    Uzawa-type iteration), each application of ``A^-1`` being a solve with
    a sparse LU factorisation of the velocity Laplacian.
    """
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    _check_cell(cell)
    mask = cell.mask
    force = (float(force[0]), float(force[1]))
    ny, nx = mask.shape
    zero = np.zeros(mask.shape)
    if force == (0.0, 0.0):
        return CellFlow(zero.copy(), zero.copy(), zero.copy(), mu, force, mask,
                        {"schur": SolveReport(0, 0.0, True).as_dict()})
    if mask.all():
        warnings.warn("cell has no solid: the periodic Stokes problem is singular for a "
                      "constant force; returning zero velocity", BlockedGeometryWarning)
        return CellFlow(zero.copy(), zero.copy(), zero.copy(), mu, force, mask,
                        {"schur": SolveReport(0, 0.0, True).as_dict(), "no_solid": True})
    for comp, axis in ((0, 1), (1, 0)):
        if force[comp] != 0.0 and not percolates(mask, axis=axis):
            warnings.warn(f"no periodic fluid path along y{comp + 1}: flow is blocked",
                          BlockedGeometryWarning)

    blocks, grads = _stokes_operators(mask, mu)
    # A is fixed and SPD, so factor it once instead of iterating per Schur step
    solvers = [spla.factorized(A.tocsc()) if A.shape[0] else None for _, _, A in blocks]
    rhs_u = [np.full(A.shape[0], f) for (_, _, A), f in zip(blocks, force)]
    inner = {"solves": 0}

    def apply_Ainv(vectors):
        out = []
        for solve, b in zip(solvers, vectors):
            if b.size == 0:
                out.append(b.copy())
                continue
            inner["solves"] += 1
            out.append(solve(b))
        return out

    def schur_matvec(p):
        vel = apply_Ainv([G @ p for G in grads])
        return sum(G.T @ v for G, v in zip(grads, vel))

    class _Schur:
        shape = (int(mask.sum()),) * 2

        def __matmul__(self, p):
            return schur_matvec(p)

    u_free = apply_Ainv(rhs_u)
    b = sum(G.T @ v for G, v in zip(grads, u_free))
    schur = SparseOperator(_Schur(), symmetric=True, singular=True,
                           diagonal=np.full(int(mask.sum()), 1.0 / mu))
    bnorm = float(np.linalg.norm(b - b.mean()))
    # scale-free tolerance: compare against the unconstrained divergence
    p, rep = solve_spd(schur, b, tol=tol, max_iter=2000, compat_tol=1e-6)
    vel = apply_Ainv([f - G @ p for f, G in zip(rhs_u, grads)])

    fields = []
    for (act, idx, _), v in zip(blocks, vel):
        arr = np.zeros(mask.shape)
        arr[act] = v
        fields.append(arr)
    pressure = np.zeros(mask.shape)
    pressure[mask] = p - p.mean()
    flow = CellFlow(fields[0], fields[1], pressure, mu, force, mask,
                    {"schur": rep.as_dict(), "inner_solves": inner["solves"], "unconstrained_div": bnorm})
    flow.report["max_div"] = float(np.abs(flow.divergence()).max())
    log.debug("stokes: %d schur iterations, max div %.3e", rep.iterations, flow.report["max_div"])
    return flow


def stokes_energy_balance(flow: CellFlow) -> tuple[float, float]:
    """Return ``(mu ||grad u||^2, force . int u)`` on the discrete grid."""
    blocks, _ = _stokes_operators(flow.mask, flow.mu)
    area = 1.0 / flow.mask.size
    dissipation = 0.0
    power = 0.0
    for (act, _, A), arr, f in zip(blocks, (flow.u1, flow.u2), flow.force):
        v = arr[act]
        dissipation += float(v @ (A @ v)) * area
        power += f * float(v.sum()) * area
    return dissipation, power


def drift_velocity(flow: CellFlow, pe_mic: float, cell: CellGeometry | None = None) -> np.ndarray:
    """Pe-scaled fluid average of the cell velocity."""
    return pe_mic * flow.fluid_mean()
