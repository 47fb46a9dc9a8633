import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from homogch.geometry import build_obstacle_cell
from homogch.linsolve import (
    CompatibilityError,
    IterationLimitError,
    SparseOperator,
    solve_spd,
)
from homogch.microcell import neumann_laplacian


def periodic_laplacian_1d(n):
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    A = sp.diags([main, off, off], [0, 1, -1], format="lil")
    A[0, n - 1] = -1.0
    A[n - 1, 0] = -1.0
    return A.tocsr()


def test_zero_rhs_gives_zero_without_iterations():
    op = SparseOperator(sp.eye(10) * 3.0)
    x, rep = solve_spd(op, np.zeros(10))
    assert np.all(x == 0) and rep.iterations == 0 and rep.converged


@pytest.mark.parametrize("mode", [1, 3, 7])
def test_periodic_laplacian_eigenmode(mode):
    n = 64
    op = SparseOperator(periodic_laplacian_1d(n), singular=True)
    assert op.symmetric
    j = np.arange(n)
    rhs = np.sin(2 * np.pi * mode * j / n)
    eig = 4.0 * np.sin(np.pi * mode / n) ** 2
    x, rep = solve_spd(op, rhs, tol=1e-12)
    assert np.max(np.abs(x - rhs / eig)) <= 1e-9 * np.max(np.abs(rhs / eig))
    assert abs(x.mean()) <= 1e-12


def test_incompatible_rhs_raises():
    op = SparseOperator(periodic_laplacian_1d(16), singular=True)
    with pytest.raises(CompatibilityError):
        solve_spd(op, np.ones(16))


def test_iteration_limit_carries_report():
    op = neumann_laplacian(build_obstacle_cell(0.3, 32))
    rng = np.random.default_rng(0)
    b = rng.standard_normal(op.dimension)
    with pytest.raises(IterationLimitError) as info:
        solve_spd(op, b - b.mean(), tol=1e-14, max_iter=3)
    assert info.value.report.iterations == 3
    assert not info.value.report.converged


def test_nonsymmetric_flag_detected():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
    assert not SparseOperator(A).symmetric


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_singular_solution_is_mean_free_and_residual_is_honest(seed):
    op = neumann_laplacian(build_obstacle_cell(0.25, 24))
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(op.dimension)
    b -= b.mean()
    x, rep = solve_spd(op, b)
    assert abs(x.mean()) <= 1e-12
    recomputed = np.linalg.norm(op @ x - (b - b.mean()))
    assert abs(rep.residual - recomputed) <= 1e-14 * max(recomputed, rep.rhs_norm)
    assert rep.residual <= 1e-10 * rep.rhs_norm
