"""Upscaled convective Cahn-Hilliard equation on the macroscopic grid.

The order parameter evolves by

    p dphi/dt = div(C grad phi) + lam div(M_phi grad f(phi))
                - (lam/p) div(M_w grad(div(D grad phi) - g0))

discretised with second-order centred fluxes on a cell-centred grid and
integrated with classical RK4 under step-doubling error control.  Arrays
are indexed ``phi[j, i]`` with ``j`` along ``Y`` (transverse, always
periodic) and ``i`` along ``X``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .energy import FreeEnergy, double_well
from .tensors import EffectiveTensors

log = logging.getLogger(__name__)

PERIODIC = "periodic"
INLET = "inlet"


class BlowupError(FloatingPointError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


class StiffnessError(RuntimeError):
    pass


@dataclass
class MacroConfig:
    tensors: EffectiveTensors
    fe: FreeEnergy
    nx: int = 64
    ny: int = 64
    dx: float = 0.01
    mode: str = PERIODIC
    inlet_flux: float = 1.0
    inlet_contrast: float = 1.0
    cell_points: int = 10
    rk_tol: float = 1e-6
    t_end: float = 0.0
    output_every: float = 0.0
    dt0: float | None = None
    dt_min: float = 1e-14
    dt_max: float | None = None
    front_x0: float | None = None
    front_amplitude: float | None = None
    front_wavelength: float | None = None
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        if self.mode not in (PERIODIC, INLET):
            raise ValueError(f"unknown boundary mode {self.mode!r}")
        if self.nx < 4 or self.ny < 2:
            raise ValueError("macro grid too small")

    @property
    def lam(self) -> float:
        return self.fe.lam

    @property
    def eta(self) -> float:
        return self.fe.eta if self.fe.eta is not None else 2.0 * self.dx

    def stable_dt(self) -> float:
        """Explicit RK4 limit from Gershgorin bounds of the linearised operator."""
        T = self.tensors
        p = T.porosity

        def spread(A):
            return 4.0 * (abs(A[0, 0]) + abs(A[1, 1]) + abs(A[0, 1]) + abs(A[1, 0])) / self.dx**2

        s = np.linspace(-1.2, 1.2, 241)
        fmax = float(np.max(np.abs(self.fe.f_prime(s))))
        rate = (self.lam / p**2) * spread(T.M_w) * spread(T.D)
        rate += (self.lam / p) * spread(T.M_phi) * fmax + spread(T.C) / p
        return 2.5 / rate if rate > 0 else math.inf

    def relaxation_time(self) -> float:
        """Time scale ``p^2 eta^4 / (lam m d)`` of the fourth-order term across one interface width."""
        T = self.tensors
        m = 0.5 * (T.M_w[0, 0] + T.M_w[1, 1])
        d = 0.5 * (T.D[0, 0] + T.D[1, 1])
        if m * d <= 0 or self.lam <= 0:
            return math.inf
        return T.porosity**2 * self.eta**4 / (self.lam * m * d)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        X = (np.arange(self.nx) + 0.5) * self.dx
        Y = (np.arange(self.ny) + 0.5) * self.dx
        return np.meshgrid(X, Y)


@dataclass
class MacroState:
    phi: np.ndarray
    time: float
    dt: float
    mass: float = 0.0
    energy: float = 0.0


# ---------------------------------------------------------------------------
# spatial operator


def _extend(a: np.ndarray, mode: str, dx: float, h0: float = 0.0) -> np.ndarray:
    """Pad by one cell: periodic in Y, periodic or Neumann ghosts in X."""
    if mode == PERIODIC:
        e = np.concatenate([a[:, -1:], a, a[:, :1]], axis=1)
    else:
        # grad_n phi = h0 with outward normals -e_X (left) and +e_X (right)
        e = np.concatenate([a[:, :1] + dx * h0, a, a[:, -1:] + dx * h0], axis=1)
    return np.concatenate([e[-1:], e, e[:1]], axis=0)


def _fluxes(e: np.ndarray, A: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Face values of ``A grad`` from an extended array.

    Returns ``Fx`` of shape ``(ny, nx + 1)`` (faces left of column i, plus
    the last right face) and ``Fy`` of shape ``(ny + 1, nx)``.
    """
    inner_rows = e[1:-1]
    Fx = A[0, 0] * (inner_rows[:, 1:] - inner_rows[:, :-1]) / dx
    if A[0, 1] != 0.0:
        dy = (e[2:] - e[:-2]) / (2 * dx)  # rows 1..ny, all columns
        Fx = Fx + A[0, 1] * 0.5 * (dy[:, 1:] + dy[:, :-1])
    inner_cols = e[:, 1:-1]
    Fy = A[1, 1] * (inner_cols[1:] - inner_cols[:-1]) / dx
    if A[1, 0] != 0.0:
        ddx = (e[:, 2:] - e[:, :-2]) / (2 * dx)  # all rows, columns 1..nx
        Fy = Fy + A[1, 0] * 0.5 * (ddx[1:] + ddx[:-1])
    return Fx, Fy


def _div(Fx: np.ndarray, Fy: np.ndarray, dx: float) -> np.ndarray:
    return (Fx[:, 1:] - Fx[:, :-1]) / dx + (Fy[1:] - Fy[:-1]) / dx


def div_tensor_grad(phi: np.ndarray, A: np.ndarray, dx: float, mode: str = PERIODIC,
                    h0: float = 0.0) -> np.ndarray:
    """Conservative ``div(A grad phi)``."""
    return _div(*_fluxes(_extend(phi, mode, dx, h0), np.asarray(A, float), dx), dx)


def inlet_profile(config: MacroConfig) -> np.ndarray:
    """Square-wave inflow along Y with the reference-cell period."""
    j = np.arange(config.ny)
    half = max(config.cell_points // 2, 1)
    square = np.where((j // half) % 2 == 0, 1.0, -1.0)
    return config.inlet_flux * (1.0 + config.inlet_contrast * square)


def total_flux(phi: np.ndarray, config: MacroConfig, include_C: bool = True):
    """Face values of ``J = C grad phi + lam M_phi grad f - (lam/p) M_w grad w``."""
    T = config.tensors
    dx, mode, lam, p = config.dx, config.mode, config.lam, T.porosity
    h0 = T.h_tilde0 if mode == INLET else 0.0
    e = _extend(phi, mode, dx, h0)
    Jx, Jy = _fluxes(config.fe.f(e), T.M_phi, dx)
    Jx, Jy = lam * Jx, lam * Jy
    if include_C and np.any(T.C != 0.0):
        Cx, Cy = _fluxes(e, T.C, dx)
        Jx, Jy = Jx + Cx, Jy + Cy
    w = _div(*_fluxes(e, T.D, dx), dx) - T.g_tilde0
    # grad_n of the inner Laplacian vanishes on non-periodic walls
    Wx, Wy = _fluxes(_extend(w, mode, dx, 0.0), T.M_w, dx)
    Jx = Jx - (lam / p) * Wx
    Jy = Jy - (lam / p) * Wy
    if mode == INLET:
        Jx[:, 0] = -inlet_profile(config)
        Jx[:, -1] = 0.0
    return Jx, Jy


def rhs(phi: np.ndarray, config: MacroConfig, t: float = 0.0, include_C: bool = True) -> np.ndarray:
    """Time derivative of ``phi`` (already divided by the porosity)."""
    if not np.all(np.isfinite(phi)):
        raise BlowupError("non-finite order parameter", t)
    Jx, Jy = total_flux(phi, config, include_C)
    return _div(Jx, Jy, config.dx) / config.tensors.porosity


# ---------------------------------------------------------------------------
# time stepping


def rk4_step(f: Callable, t: float, y, dt: float):
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class AdaptiveRK4:
    """Classical RK4 with step-doubling error control.

    The error of a step is ``max|y_full - y_two_halves| / 15``; accepted steps
    return the two-half-step solution.
    """

    f: Callable
    tol: float
    dt_min: float = 1e-14
    dt_max: float = math.inf
    safety: float = 0.9
    max_growth: float = 5.0
    min_shrink: float = 0.2
    rejected: int = 0

    def _factor(self, err: float) -> float:
        if err == 0.0:
            return self.max_growth
        return min(self.max_growth, max(self.min_shrink, self.safety * (self.tol / err) ** 0.2))

    def step(self, t: float, y, dt: float, t_stop: float = math.inf):
        """Advance once; returns ``(t_new, y_new, dt_used, err, dt_next)``."""
        dt = min(dt, self.dt_max)
        while True:
            last = t + dt >= t_stop
            if last:
                dt = t_stop - t
            k1 = self.f(t, y)
            full = _rk4_from(self.f, t, y, dt, k1)
            mid = _rk4_from(self.f, t, y, 0.5 * dt, k1)
            half = rk4_step(self.f, t + 0.5 * dt, mid, 0.5 * dt)
            diff = np.max(np.abs(np.asarray(full) - np.asarray(half)))
            err = float(diff) / 15.0
            if not math.isfinite(err):
                err = math.inf
            if err <= self.tol:
                dt_next = min(max(dt * self._factor(err), self.dt_min), self.dt_max)
                if last and dt_next < dt:
                    dt_next = dt
                return t + dt, half, dt, err, dt_next
            self.rejected += 1
            if dt <= self.dt_min:
                raise StiffnessError(
                    f"step size {dt:.3e} at dt_min with error {err:.3e} > tol {self.tol:.3e} (t = {t:.6g})")
            dt = max(dt * self._factor(err), self.dt_min)


def _rk4_from(f, t, y, dt, k1):
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f: Callable, y0, t_end: float, tol: float, dt0: float, **kw):
    """Integrate ``y' = f(t, y)`` from 0 to ``t_end``; returns ``(y, steps)``."""
    stepper = AdaptiveRK4(f, tol, **kw)
    t, y, dt, steps = 0.0, y0, dt0, 0
    while t < t_end:
        t, y, _, _, dt = stepper.step(t, y, dt, t_stop=t_end)
        steps += 1
    return y, steps


# ---------------------------------------------------------------------------
# diagnostics


def mass(phi: np.ndarray, dx: float) -> float:
    return float(phi.sum()) * dx * dx


def discrete_energy(phi: np.ndarray, config: MacroConfig) -> float:
    """``sum [lam F(phi) + lam dbar/(2p) |grad phi|^2] dX^2`` with face differences."""
    T = config.tensors
    lam, p = config.lam, T.porosity
    dbar = 0.5 * (T.D[0, 0] + T.D[1, 1])
    gy = phi - np.roll(phi, 1, axis=0)
    if config.mode == PERIODIC:
        gx = phi - np.roll(phi, 1, axis=1)
    else:
        gx = phi[:, 1:] - phi[:, :-1]
    grad2 = float((gx**2).sum() + (gy**2).sum())
    bulk = float(config.fe.F(phi).sum()) * config.dx**2
    return lam * bulk + lam * dbar / (2.0 * p) * grad2


def interface_position(phi: np.ndarray, dx: float = 1.0, periodic_x: bool = False,
                       periodic_y: bool = True) -> list[np.ndarray]:
    """Zero level set as polylines of ``(X, Y)`` points.

    Crossings are linearly interpolated along grid lines (marching squares).
    Periodic directions are closed by appending the first row/column.
    """
    from skimage import measure

    a = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("phi must be finite")
    if periodic_y:
        a = np.concatenate([a, a[:1]], axis=0)
    if periodic_x:
        a = np.concatenate([a[:, -1:], a, a[:, :1]], axis=1)
        offset = -1.0
    else:
        offset = 0.0
    if a.min() > 0 or a.max() < 0:
        return []
    lines = []
    for c in measure.find_contours(a, 0.0):
        X = (c[:, 1] + offset + 0.5) * dx
        Y = (c[:, 0] + 0.5) * dx
        lines.append(np.column_stack([X, Y]))
    return lines


def front_profile(phi: np.ndarray, dx: float) -> np.ndarray:
    """Per row, ``X`` of the right-most ``+ -> -`` zero crossing (NaN if none)."""
    a = np.asarray(phi, dtype=float)
    left, right = a[:, :-1], a[:, 1:]
    cross = (left >= 0) & (right < 0)
    out = np.full(a.shape[0], np.nan)
    rows = np.nonzero(cross.any(axis=1))[0]
    for j in rows:
        i = np.nonzero(cross[j])[0][-1]
        s = left[j, i] / (left[j, i] - right[j, i])
        out[j] = (i + 0.5 + s) * dx
    return out


@dataclass
class Diagnostics:
    mass: float
    energy: float
    front_position: float
    modulation: float


def diagnostics(phi: np.ndarray, config: MacroConfig) -> Diagnostics:
    prof = front_profile(phi, config.dx)
    if np.all(np.isnan(prof)):
        pos = mod = float("nan")
    else:
        pos = float(np.nanmean(prof))
        mod = float(np.nanmax(prof) - np.nanmin(prof))
    return Diagnostics(mass(phi, config.dx), discrete_energy(phi, config), pos, mod)


def dominant_wavelength(profile: np.ndarray, dx: float) -> float:
    """Wavelength of the strongest non-constant Fourier mode of a periodic profile."""
    prof = np.asarray(profile, dtype=float)
    prof = np.where(np.isnan(prof), np.nanmean(prof), prof)
    spec = np.abs(np.fft.rfft(prof - prof.mean()))
    spec[0] = 0.0
    m = int(np.argmax(spec))
    return prof.size * dx / m if m else math.inf


# ---------------------------------------------------------------------------
# driver


def initial_condition(config: MacroConfig) -> np.ndarray:
    """Sinusoidally perturbed tanh front(s) of width ``eta``."""
    X, Y = config.grid()
    Lx, Ly = config.nx * config.dx, config.ny * config.dx
    period = config.front_wavelength if config.front_wavelength is not None else Ly
    amp = config.front_amplitude if config.front_amplitude is not None else config.dx
    width = math.sqrt(2.0) * config.eta
    wiggle = amp * np.sin(2.0 * np.pi * Y / period)
    if config.mode == PERIODIC:
        x0 = config.front_x0 if config.front_x0 is not None else 0.25 * Lx
        # band of the +1 phase between two fronts
        dist = np.abs(X - 0.5 * Lx) - (0.5 * Lx - x0)
        return -np.tanh((dist - wiggle) / width)
    x0 = config.front_x0 if config.front_x0 is not None else 0.1 * Lx
    return -np.tanh((X - x0 - wiggle) / width)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    series: list = field(default_factory=list)  # (t, dt, err, mass, energy, front, modulation)
    error: Exception | None = None

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


def run(config: MacroConfig, phi0: np.ndarray | None = None,
        callback: Callable | None = None) -> Trajectory:
    """Integrate to ``config.t_end``, emitting snapshots every ``output_every``.

    Numerical failures end the run early; the partial trajectory is kept and
    the exception stored on ``Trajectory.error``.
    """
    phi = initial_condition(config) if phi0 is None else np.array(phi0, dtype=float)
    dt_max = config.dt_max if config.dt_max is not None else config.stable_dt()
    dt = config.dt0 if config.dt0 is not None else min(dt_max, max(config.t_end, 0.0) or dt_max) * 0.1
    f = lambda t, y: rhs(y, config, t)  # noqa: E731
    stepper = AdaptiveRK4(f, config.rk_tol, dt_min=config.dt_min, dt_max=dt_max)
    traj = Trajectory()

    def record(t, dt_used, err):
        d = diagnostics(phi, config)
        traj.series.append((t, dt_used, err, d.mass, d.energy, d.front_position, d.modulation))

    t = 0.0
    traj.times.append(t)
    traj.snapshots.append(phi.copy())
    record(t, 0.0, 0.0)
    next_out = config.output_every if config.output_every > 0 else math.inf
    steps = 0
    try:
        while t < config.t_end and steps < config.max_steps:
            stop = min(config.t_end, next_out)
            t, phi, dt_used, err, dt = stepper.step(t, phi, dt, t_stop=stop)
            steps += 1
            if not np.all(np.isfinite(phi)):
                raise BlowupError("non-finite order parameter", t)
            record(t, dt_used, err)
            if t >= next_out - 1e-15 * max(1.0, abs(t)):
                traj.times.append(t)
                traj.snapshots.append(phi.copy())
                next_out += config.output_every
            if callback is not None:
                callback(t, phi)
    except (BlowupError, StiffnessError) as exc:
        log.error("macro run aborted: %s", exc)
        traj.error = exc
    if traj.times[-1] != t:
        traj.times.append(t)
        traj.snapshots.append(phi.copy())
    return traj


def no_flow_config(config: MacroConfig) -> MacroConfig:
    """Same configuration with the dispersion tensor removed."""
    T = replace(config.tensors, C=np.zeros((2, 2)))
    return replace(config, tensors=T)
