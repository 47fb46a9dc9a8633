"""Polynomial homogeneous free energies.

``f(u) = sum_{i=1}^{2r-1} a_i u^i`` and ``F(u) = F0 + sum_{i=2}^{2r} b_i u^i``
with ``i b_i = a_{i-1}``, so that ``F' = f``.  The additive constant ``F0``
does not enter the dynamics; it lets the double well vanish at ``u = +-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FreeEnergyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FreeEnergy:
    r: int
    a: np.ndarray  # a[i] multiplies u**i in f, i = 0 .. 2r-1
    b: np.ndarray  # b[i] multiplies u**i in F, i = 0 .. 2r (b[0] = F0)
    lam: float = 1.0
    eta: float | None = None

    @classmethod
    def from_f(cls, a, lam: float = 1.0, offset: float = 0.0, eta: float | None = None) -> "FreeEnergy":
        """Build from the coefficients ``a_0 .. a_{2r-1}`` of ``f``."""
        a = np.asarray(a, dtype=float)
        if a.size < 4 or a.size % 2:
            raise FreeEnergyError("f must have degree 2r-1 with r >= 2")
        r = a.size // 2
        b = np.zeros(2 * r + 1)
        b[0] = offset
        for i in range(2, 2 * r + 1):
            b[i] = a[i - 1] / i
        return cls(r, a, b, lam, eta)

    def f(self, u):
        return np.polynomial.polynomial.polyval(u, self.a)

    def f_prime(self, u):
        return np.polynomial.polynomial.polyval(u, np.polynomial.polynomial.polyder(self.a))

    def F(self, u):
        return np.polynomial.polynomial.polyval(u, self.b)

    def as_dict(self) -> dict:
        return {"r": self.r, "a": self.a.tolist(), "b": self.b.tolist(),
                "lambda": self.lam, "eta": self.eta}


def double_well(eta: float, lam: float = 1.0) -> FreeEnergy:
    """``F(u) = (u^2 - 1)^2 / (4 eta^2)``, ``f(u) = (u^3 - u) / eta^2``."""
    if not eta > 0:
        raise FreeEnergyError("eta must be positive")
    s = 1.0 / eta**2
    return FreeEnergy.from_f([0.0, -s, 0.0, s], lam=lam, offset=0.25 * s, eta=eta)


def validate_pf(fe: FreeEnergy) -> str | None:
    """Return a description of the first violated structural condition, or None."""
    r = fe.r
    if r < 2 or fe.a.size != 2 * r or fe.b.size != 2 * r + 1:
        return "degree: f must have degree 2r-1 and F degree 2r with r >= 2"
    if fe.a[0] != 0.0:
        return "f(0) != 0: f must vanish at the origin"
    if fe.b[1] != 0.0:
        return "F has a linear term"
    for i in range(2, 2 * r + 1):
        if not np.isclose(i * fe.b[i], fe.a[i - 1], rtol=1e-12, atol=1e-300):
            return f"coefficient linkage broken: {i}*b_{i} != a_{i - 1}"
    if not fe.a[2 * r - 1] > 0:
        return "leading coefficient not positive"
    return None


def eval_f(fe: FreeEnergy, u):
    return fe.f(u)


def eval_f_prime(fe: FreeEnergy, u):
    return fe.f_prime(u)


def eval_F(fe: FreeEnergy, u):
    return fe.F(u)
