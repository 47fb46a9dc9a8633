"""Independent reference solutions used by the test-suite.

Everything here is written with explicit loops and dense linear algebra so
that it shares no code path with the package solvers.
"""

import numpy as np


def dense_corrector(mask, k):
    """Brute-force finite-volume Neumann corrector via dense least squares."""
    ny, nx = mask.shape
    h = 1.0 / nx
    cells = [(j, i) for j in range(ny) for i in range(nx) if mask[j, i]]
    index = {c: n for n, c in enumerate(cells)}
    A = np.zeros((len(cells), len(cells)))
    b = np.zeros(len(cells))
    for (j, i), row in index.items():
        for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nb = ((j + dj) % ny, (i + di) % nx)
            if nb in index:
                A[row, row] += 1.0
                A[row, index[nb]] -= 1.0
            else:
                normal = (di, dj)
                b[row] += normal[k - 1] * h
    # append the mean-zero constraint as an extra equation
    A = np.vstack([A, np.ones(len(cells))])
    b = np.append(b, 0.0)
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    out = np.zeros(mask.shape)
    for (j, i), n in index.items():
        out[j, i] = x[n]
    return out


def poiseuille(s, height, mu=1.0, force=1.0):
    return force * s * (height - s) / (2.0 * mu)


def reference_cahn_hilliard(phi, dx, lam, m, f):
    """``lam m Lap(f(phi) - Lap phi)`` with the five-point Laplacian."""

    def lap(a):
        return (np.roll(a, 1, 0) + np.roll(a, -1, 0) + np.roll(a, 1, 1)
                + np.roll(a, -1, 1) - 4.0 * a) / dx**2

    return lam * m * lap(f(phi) - lap(phi))
