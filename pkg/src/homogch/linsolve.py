"""Preconditioned conjugate gradients for the masked-grid systems.

Pure-Neumann cell problems are singular with constants in the kernel.
Those are handled by projecting the right-hand side onto mean-zero
vectors, keeping the residual mean-free during the iteration and
returning the mean-zero representative of the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    pass


class IterationLimitError(SolverError):
    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


class CompatibilityError(SolverError):
    """Right-hand side of a singular system violates the Fredholm condition."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    rhs_norm: float = 0.0
    imbalance: float = 0.0

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "converged": self.converged, "rhs_norm": self.rhs_norm,
                "imbalance": self.imbalance}


class SparseOperator:
    """CSR matrix with a symmetry flag and an optional constant kernel.

    ``matrix`` may also be any object supporting ``@`` with a vector (for
    example a matrix-free Schur complement); ``diagonal`` is then required
    for preconditioning or defaults to ones.
    """

    def __init__(self, matrix, symmetric: bool | None = None, singular: bool = False,
                 diagonal: np.ndarray | None = None):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix)
            matrix.sum_duplicates()
            if symmetric is None:
                diff = matrix - matrix.T
                symmetric = diff.nnz == 0 or float(abs(diff).max()) == 0.0
            if diagonal is None:
                diagonal = matrix.diagonal()
        self.matrix = matrix
        self.dimension = matrix.shape[0]
        self.symmetric = bool(symmetric)
        self.singular = singular
        if diagonal is None:
            diagonal = np.ones(self.dimension)
        diagonal = np.asarray(diagonal, dtype=float).copy()
        diagonal[diagonal == 0] = 1.0
        self.diagonal = diagonal

    @property
    def shape(self):
        return (self.dimension, self.dimension)

    def __matmul__(self, x):
        return self.matrix @ x


def default_max_iter(dimension: int) -> int:
    return max(50, int(50 * math.sqrt(max(dimension, 1))))


def solve_spd(op: SparseOperator, rhs: np.ndarray, tol: float = 1e-10,
              max_iter: int | None = None, x0: np.ndarray | None = None,
              compat_tol: float = 1e-8) -> tuple[np.ndarray, SolveReport]:
    """Solve ``op x = rhs`` for symmetric positive (semi)definite ``op``.

    Success means ``||op x - b||_2 <= tol * ||b||_2``, where ``b`` is
    ``rhs`` with its mean removed when ``op.singular``.  The returned
    report's residual is recomputed from the final iterate.
    """
    b = np.asarray(rhs, dtype=float).copy()
    n = op.dimension
    if b.shape != (n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({n},)")
    if max_iter is None:
        max_iter = default_max_iter(n)

    imbalance = 0.0
    if op.singular:
        total = float(b.sum())
        bnorm_raw = float(np.linalg.norm(b))
        if abs(total) > compat_tol * max(bnorm_raw, np.finfo(float).tiny) and bnorm_raw > 0:
            raise CompatibilityError(
                f"incompatible right-hand side: sum={total:.3e}, |rhs|={bnorm_raw:.3e}")
        imbalance = total
        b -= b.mean()

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, 0.0, imbalance)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - op @ x
    if op.singular:
        r -= r.mean()
    inv_diag = 1.0 / op.diagonal
    z = inv_diag * r
    d = z.copy()
    rz = float(r @ z)
    target = tol * bnorm
    it = 0
    rnorm = float(np.linalg.norm(r))
    while rnorm > target and it < max_iter:
        Ad = op @ d
        dAd = float(d @ Ad)
        if dAd <= 0.0:
            break
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        if op.singular:
            r -= r.mean()
            x -= x.mean()
        z = inv_diag * r
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
        it += 1
        rnorm = float(np.linalg.norm(r))
        # guard against drift between recursive and true residual
        if rnorm <= target:
            r_true = b - op @ x
            if op.singular:
                r_true -= r_true.mean()
            r = r_true
            rnorm = float(np.linalg.norm(r))
            z = inv_diag * r
            rz = float(r @ z)
            d = z.copy()

    if op.singular:
        x -= x.mean()
    residual = float(np.linalg.norm(op @ x - b))
    report = SolveReport(it, residual, residual <= target, bnorm, imbalance)
    if not report.converged:
        raise IterationLimitError(
            f"CG did not reach tol={tol:g} in {it} iterations (residual {residual:.3e})", report)
    return x, report
