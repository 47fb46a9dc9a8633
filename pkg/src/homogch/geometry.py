"""Periodic reference-cell geometries on a Cartesian mask.

The cell is the unit square ``[0, 1]^2`` split into ``ny x nx`` square
control volumes.  ``mask[j, i]`` is True where the volume centred at
``((i + 1/2) h, (j + 1/2) h)`` belongs to the fluid phase.  Row index ``j``
runs along ``y2`` (transverse), column index ``i`` along ``y1`` (flow).
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class GeometryError(ValueError):
    """Raised for cells that cannot host the cell problems."""


class Face(NamedTuple):
    """A fluid/solid interface face of the staircase boundary."""

    j: int
    i: int
    location: tuple[float, float]
    normal: tuple[int, int]


# (dj, di) offsets and the outward normal (n1, n2) of the face they cross
_NEIGHBOURS = (
    ((0, 1), (1, 0)),
    ((0, -1), (-1, 0)),
    ((1, 0), (0, 1)),
    ((-1, 0), (0, -1)),
)


@dataclass(frozen=True, eq=False)
class CellGeometry:
    mask: np.ndarray
    name: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise GeometryError("mask must be two-dimensional")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def ny(self) -> int:
        return self.mask.shape[0]

    @property
    def nx(self) -> int:
        return self.mask.shape[1]

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def porosity(self) -> float:
        return porosity(self)

    @property
    def n_fluid(self) -> int:
        return int(self.mask.sum())

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates ``(y1, y2)`` as ``(ny, nx)`` arrays."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.ny}x{self.nx}".encode())
        h.update(np.packbits(self.mask).tobytes())
        return h.hexdigest()[:16]

    def to_text(self) -> str:
        return mask_to_text(self.mask)


def porosity(cell: CellGeometry) -> float:
    """Fluid volume fraction ``|Y1| / |Y|`` by node counting."""
    return float(cell.mask.sum()) / cell.mask.size


def boundary_faces(cell: CellGeometry) -> list[Face]:
    """Staircase faces between fluid and solid volumes.

    Each entry carries the owning fluid volume, the face midpoint and the
    axis-aligned outward normal pointing from fluid into solid.
    """
    mask = cell.mask
    h1, h2 = cell.hx, cell.hy
    faces = []
    for (dj, di), normal in _NEIGHBOURS:
        solid_nb = ~np.roll(mask, (-dj, -di), axis=(0, 1))
        js, is_ = np.nonzero(mask & solid_nb)
        for j, i in zip(js.tolist(), is_.tolist()):
            x = (i + 0.5 + 0.5 * di) * h1 % 1.0
            y = (j + 0.5 + 0.5 * dj) * h2 % 1.0
            faces.append(Face(j, i, (x, y), normal))
    faces.sort(key=lambda f: (f.j, f.i, f.normal))
    return faces


def face_arrays(cell: CellGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised form of :func:`boundary_faces`: flat fluid index, normals."""
    faces = boundary_faces(cell)
    if not faces:
        return np.zeros(0, dtype=int), np.zeros((0, 2))
    ji = np.array([(f.j, f.i) for f in faces])
    flat = ji[:, 0] * cell.nx + ji[:, 1]
    normals = np.array([f.normal for f in faces], dtype=float)
    return flat, normals


def _components(mask: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
    """Periodic 4-connected labelling with integer lifts.

    Returns the component count, the label array and, per node, the lift
    ``(wy, wx)`` reached during the breadth-first search.  A component
    winds around the torus in a direction when some edge joins two nodes
    whose lifts disagree in that direction.
    """
    ny, nx = mask.shape
    labels = -np.ones(mask.shape, dtype=int)
    lift = np.zeros(mask.shape + (2,), dtype=int)
    ncomp = 0
    for start in zip(*np.nonzero(mask)):
        if labels[start] >= 0:
            continue
        labels[start] = ncomp
        queue = deque([start])
        while queue:
            j, i = queue.popleft()
            for (dj, di), _ in _NEIGHBOURS:
                jj, ii = j + dj, i + di
                wy, wx = lift[j, i]
                if jj < 0 or jj >= ny:
                    wy += 1 if jj >= ny else -1
                    jj %= ny
                if ii < 0 or ii >= nx:
                    wx += 1 if ii >= nx else -1
                    ii %= nx
                if not mask[jj, ii] or labels[jj, ii] >= 0:
                    continue
                labels[jj, ii] = ncomp
                lift[jj, ii] = (wy, wx)
                queue.append((jj, ii))
        ncomp += 1
    return ncomp, labels, lift


def n_components(mask: np.ndarray) -> int:
    return _components(np.asarray(mask, dtype=bool))[0]


def percolates(mask: np.ndarray, axis: int = 1) -> bool:
    """True if some fluid path wraps around the periodic cell along ``axis``.

    ``axis=1`` is the flow direction ``y1``, ``axis=0`` the transverse one.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return False
    _, labels, lift = _components(mask)
    ny, nx = mask.shape
    k = axis  # lift component: 0 -> wy, 1 -> wx
    for shift_axis, size in ((0, ny), (1, nx)):
        nb = np.roll(np.arange(size), -1)
        if shift_axis == 0:
            a, b = mask, mask[nb, :]
            la, lb = lift, lift[nb, :]
            crossing = np.zeros((ny, nx, 2), dtype=int)
            crossing[-1, :, 0] = 1
        else:
            a, b = mask, mask[:, nb]
            la, lb = lift, lift[:, nb]
            crossing = np.zeros((ny, nx, 2), dtype=int)
            crossing[:, -1, 1] = 1
        edge = a & b
        # lift of the neighbour as reached through this edge
        expected = la + crossing
        if np.any(edge & (expected[..., k] != lb[..., k])):
            return True
    return False


def validate_cell(cell: CellGeometry) -> None:
    """Raise :class:`GeometryError` unless the fluid phase is usable."""
    if cell.n_fluid == 0:
        raise GeometryError("degenerate geometry: cell contains no fluid")
    if n_components(cell.mask) != 1:
        raise GeometryError("invalid geometry: fluid phase is disconnected")
    if not cell.mask.all() and not percolates(cell.mask, axis=1):
        raise GeometryError("invalid geometry: fluid does not wrap along y1")


def build_channel_cell(amplitude: float, cross_section: float, resolution: int) -> CellGeometry:
    """Sinusoidal channel of constant vertical cross-section.

    The centreline is ``y2 = 1/2 + amplitude * sin(2 pi y1)``, one full
    period per cell, and the fluid occupies ``|y2 - centreline| <
    cross_section / 2``.  Both lengths are fractions of the cell height.
    """
    if amplitude < 0:
        raise GeometryError("amplitude must be non-negative")
    if not 0 < cross_section <= 1:
        raise GeometryError("cross_section must lie in (0, 1]")
    if amplitude + cross_section > 1 + 1e-12:
        raise GeometryError("amplitude + cross_section must not exceed 1")
    if resolution < 16:
        raise GeometryError("resolution must be at least 16")
    n = int(resolution)
    x = (np.arange(n) + 0.5) / n
    y = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, y)
    centre = 0.5 + amplitude * np.sin(2.0 * np.pi * X)
    mask = np.abs(Y - centre) < 0.5 * cross_section
    cell = CellGeometry(mask, name="channel",
                        meta={"amplitude": amplitude, "cross_section": cross_section,
                              "resolution": n})
    validate_cell(cell)
    return cell


def build_obstacle_cell(radius: float, resolution: int) -> CellGeometry:
    """Square cell with a centred circular solid inclusion."""
    if not 0 <= radius < 0.5:
        raise GeometryError("radius must lie in [0, 0.5)")
    n = int(resolution)
    x = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, x)
    mask = (X - 0.5) ** 2 + (Y - 0.5) ** 2 >= radius**2
    cell = CellGeometry(mask, name="obstacle", meta={"radius": radius, "resolution": n})
    validate_cell(cell)
    return cell


def empty_cell(resolution: int) -> CellGeometry:
    n = int(resolution)
    return CellGeometry(np.ones((n, n), dtype=bool), name="empty", meta={"resolution": n})


def mask_to_text(mask: np.ndarray) -> str:
    """Rows of ``1`` (fluid) / ``0`` (solid), top row = largest ``y2``."""
    rows = ["".join("1" if v else "0" for v in row) for row in np.asarray(mask)[::-1]]
    return "\n".join(rows) + "\n"


def mask_from_text(text: str) -> np.ndarray:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise GeometryError("empty mask file")
    width = len(rows[0])
    for k, row in enumerate(rows):
        if len(row) != width or set(row) - {"0", "1"}:
            raise GeometryError(f"malformed mask row {k + 1}")
    return np.array([[c == "1" for c in row] for row in rows[::-1]], dtype=bool)


def save_mask(cell: CellGeometry, path: str | Path, header: dict | None = None) -> None:
    """Write the mask; ``header`` entries become leading ``# key: value`` lines."""
    head = "".join(f"# {k}: {v}\n" for k, v in (header or {}).items())
    Path(path).write_text(head + cell.to_text())


def load_mask(path: str | Path, name: str = "file") -> CellGeometry:
    return CellGeometry(mask_from_text(Path(path).read_text()), name=name)
