"""Shared domain types: angular grids, PAS maps, and the angle convention.

Convention used everywhere: azimuth ``alpha`` is measured counterclockwise
from +x in the xy-plane (0 <= alpha < 360 deg), elevation ``beta`` from the
xy-plane toward +z (0 <= beta < 90 deg).  A direction is

    d = (cos(beta) cos(alpha), cos(beta) sin(alpha), sin(beta))

Grids are row-major with elevation as the outer (row) index; cell (m, n) is
centered at beta = (m + 0.5) * elev_step, alpha = (n + 0.5) * azim_step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroMap, EmptyBounds, GridMismatch, IndexOutOfRange

DEG = math.pi / 180.0


@dataclass(frozen=True)
class AngularGrid:
    """Uniform elevation x azimuth grid covering the upper hemisphere."""

    n_elev: int
    n_azim: int

    def __post_init__(self):
        if self.n_elev < 1 or self.n_azim < 1:
            raise GridMismatch("grid counts must be positive")
        if 90.0 % (90.0 / self.n_elev) != 0 and not math.isclose(
            self.n_elev * self.elev_step, 90.0
        ):
            raise GridMismatch("n_elev * elev_step must equal 90")

    @property
    def elev_step(self) -> float:
        return 90.0 / self.n_elev

    @property
    def azim_step(self) -> float:
        return 360.0 / self.n_azim

    @property
    def n_cells(self) -> int:
        return self.n_elev * self.n_azim

    def cell_center(self, m: int, n: int) -> tuple[float, float]:
        """(alpha_deg, beta_deg) of the center of cell (m, n)."""
        self._check_index(m, n)
        return (n + 0.5) * self.azim_step, (m + 0.5) * self.elev_step

    def elev_centers(self) -> np.ndarray:
        return (np.arange(self.n_elev) + 0.5) * self.elev_step

    def azim_centers(self) -> np.ndarray:
        return (np.arange(self.n_azim) + 0.5) * self.azim_step

    def _check_index(self, m: int, n: int) -> None:
        if not (0 <= m < self.n_elev and 0 <= n < self.n_azim):
            raise IndexOutOfRange(f"cell ({m}, {n}) outside {self.n_elev}x{self.n_azim}")


def cell_direction(grid: AngularGrid, m: int, n: int) -> np.ndarray:
    """Unit Cartesian direction of the center of grid cell (m, n)."""
    alpha, beta = grid.cell_center(m, n)
    a, b = alpha * DEG, beta * DEG
    cb = math.cos(b)
    return np.array([cb * math.cos(a), cb * math.sin(a), math.sin(b)])


def all_cell_directions(grid: AngularGrid) -> np.ndarray:
    """(n_elev, n_azim, 3) array of unit directions for every cell center."""
    a = grid.azim_centers() * DEG
    b = grid.elev_centers() * DEG
    cb, sb = np.cos(b), np.sin(b)
    out = np.empty((grid.n_elev, grid.n_azim, 3))
    out[:, :, 0] = cb[:, None] * np.cos(a)[None, :]
    out[:, :, 1] = cb[:, None] * np.sin(a)[None, :]
    out[:, :, 2] = sb[:, None]
    return out


class PASMap:
    """Nonnegative power map over an angular grid (linear units)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: AngularGrid, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (grid.n_elev, grid.n_azim):
            raise GridMismatch(
                f"values shape {values.shape} != grid {(grid.n_elev, grid.n_azim)}"
            )
        if not np.all(np.isfinite(values)):
            raise GridMismatch("PAS values must be finite")
        if np.any(values < 0):
            raise GridMismatch("PAS values must be nonnegative")
        if not np.any(values > 0):
            raise AllZeroMap("all-zero PAS map rejected at construction")
        self.grid = grid
        self.values = values

    @property
    def is_normalized(self) -> bool:
        return self.values.max() == 1.0

    def argmax_cell(self) -> tuple[int, int]:
        flat = int(np.argmax(self.values))
        return flat // self.grid.n_azim, flat % self.grid.n_azim

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PASMap)
            and self.grid == other.grid
            and np.array_equal(self.values, other.values)
        )


def normalize_pas(raw: PASMap) -> PASMap:
    """Scale a map so its maximum equals 1; argmax cell is unchanged."""
    peak = raw.values.max()
    return PASMap(raw.grid, raw.values / peak)


@dataclass(frozen=True)
class TxDescriptor:
    """Transmitter position (meters) and carrier frequency (Hz)."""

    position: np.ndarray
    frequency: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise GridMismatch("tx position must be a finite 3-vector")
        if not self.frequency > 0:
            raise GridMismatch("tx frequency must be positive")


@dataclass(frozen=True)
class ReceiverConfig:
    """Receiver center (meters) and sampling-sphere radius."""

    center: np.ndarray
    sphere_radius: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.center.shape != (3,):
            raise GridMismatch("rx center must be a 3-vector")
        if not self.sphere_radius > 0:
            raise GridMismatch("rx sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in meters."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))
        if self.lo.shape != (3,) or self.hi.shape != (3,):
            raise EmptyBounds("box corners must be 3-vectors")
        if np.any(self.hi < self.lo):
            raise EmptyBounds(f"box has hi < lo: {self.lo} .. {self.hi}")

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.size))

    def contains(self, p: np.ndarray, margin: float = 0.0) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lo + margin) and np.all(p <= self.hi - margin))


@dataclass(frozen=True)
class ComplexValue:
    """Complex scalar with amplitude/phase accessors; phase in (-pi, pi]."""

    re: float
    im: float = 0.0

    @classmethod
    def from_polar(cls, amplitude: float, phase: float) -> "ComplexValue":
        return cls(amplitude * math.cos(phase), amplitude * math.sin(phase))

    @property
    def amplitude(self) -> float:
        return math.hypot(self.re, self.im)

    @property
    def phase(self) -> float:
        ph = math.atan2(self.im, self.re)
        # atan2 returns [-pi, pi]; fold -pi onto +pi so phase lies in (-pi, pi]
        return math.pi if ph == -math.pi else ph

    def as_complex(self) -> complex:
        return complex(self.re, self.im)


def wrap_azimuth_deg(delta: np.ndarray) -> np.ndarray:
    """Wrap azimuth differences (degrees) into [-180, 180).

    Same expression as the contributor-binning kernels; keep in sync.
    """
    delta = np.asarray(delta, dtype=np.float64)
    return delta - 360.0 * np.floor((delta + 180.0) / 360.0)
