"""Frequency-dependent indoor propagation simulator (image-source multipath).

Generates ground-truth PAS maps for a single axis-aligned room and doubles as
the independent physics oracle in tests.  Conventions:

* transmitted signal has unit amplitude and zero phase (a common complex
  factor cancels under per-map normalization);
* each reflection multiplies the amplitude by sqrt(R) at the wall's material
  (normal-incidence Fresnel) and adds a pi phase shift;
* propagation phase is -2*pi*f*length/c;
* the receive beam is Gaussian in angular distance, sigma = beamwidth/2.355
  (FWHM convention), truncated at 3 sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEG,
    AngularGrid,
    Box,
    PASMap,
    ReceiverConfig,
    TxDescriptor,
    all_cell_directions,
    normalize_pas,
)
from .errors import (
    FrequencyOutOfTableRange,
    GridMismatch,
    NonPositiveInput,
    TotalInternalReflection,
    TxCoincidentWithRx,
    TxOutsideRoom,
)

SPEED_OF_LIGHT = 299_792_458.0

# Wall order used everywhere a wall index appears.
WALL_NAMES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")

GAUSS_BEAM_FWHM = 2.355  # full width at half maximum, in sigmas
BEAM_CUTOFF_SIGMA = 3.0


class MaterialSpec:
    """Dispersive material tabulated over frequency.

    Relative permittivity and permeability are interpolated linearly in
    log-frequency between tabulated points; queries outside the table raise.
    """

    def __init__(self, frequencies_hz, permittivity, permeability, name: str = ""):
        f = np.asarray(frequencies_hz, dtype=np.float64)
        eps = np.asarray(permittivity, dtype=np.float64)
        mu = np.asarray(permeability, dtype=np.float64)
        if f.ndim != 1 or f.shape != eps.shape or f.shape != mu.shape:
            raise GridMismatch("material table arrays must share one shape")
        if f.size < 1 or np.any(f <= 0):
            raise GridMismatch("material table needs positive frequencies")
        if np.any(np.diff(f) <= 0):
            raise GridMismatch("material table frequencies must be strictly increasing")
        if np.any(eps < 1.0):
            raise GridMismatch("relative permittivity must be >= 1")
        if np.any(mu <= 0.0):
            raise GridMismatch("relative permeability must be > 0")
        self.name = name
        self._logf = np.log(f)
        self._eps = eps
        self._mu = mu

    @property
    def f_min(self) -> float:
        return float(math.exp(self._logf[0]))

    @property
    def f_max(self) -> float:
        return float(math.exp(self._logf[-1]))

    def _interp(self, table: np.ndarray, frequency: float) -> float:
        lf = math.log(frequency)
        if lf < self._logf[0] - 1e-12 or lf > self._logf[-1] + 1e-12:
            raise FrequencyOutOfTableRange(
                f"{frequency:.3e} Hz outside material table "
                f"[{self.f_min:.3e}, {self.f_max:.3e}] for {self.name or 'material'}"
            )
        return float(np.interp(lf, self._logf, table))

    def permittivity(self, frequency: float) -> float:
        return self._interp(self._eps, frequency)

    def permeability(self, frequency: float) -> float:
        return self._interp(self._mu, frequency)

    def table(self) -> dict:
        return {
            "frequencies_hz": np.exp(self._logf).tolist(),
            "permittivity": self._eps.tolist(),
            "permeability": self._mu.tolist(),
        }


@dataclass(frozen=True)
class SceneDescriptor:
    """One-room synthetic environment."""

    room: Box
    wall_materials: tuple  # 6 MaterialSpec, WALL_NAMES order
    rx: ReceiverConfig
    max_reflection_order: int = 2
    beamwidth_deg: float = 8.0

    def __post_init__(self):
        if len(self.wall_materials) != 6:
            raise GridMismatch("need exactly 6 wall materials")
        if not (0 <= self.max_reflection_order <= 5):
            raise GridMismatch("max_reflection_order must be in [0, 5]")
        if not (0.0 < self.beamwidth_deg <= 10.0):
            raise GridMismatch("beamwidth_deg must be in (0, 10]")
        if not self.room.contains(self.rx.center) or np.any(
            self.rx.center <= self.room.lo
        ) or np.any(self.rx.center >= self.room.hi):
            raise GridMismatch("rx center must lie strictly inside the room")


@dataclass(frozen=True)
class PathContribution:
    """One multipath arrival: complex gain, AoA, geometric length, bounce count."""

    gain: complex
    aoa_azim: float  # degrees, [0, 360)
    aoa_elev: float  # degrees, may be negative for below-horizon arrivals
    length: float
    order: int


def fspl(distance: float, frequency: float) -> float:
    """Free-space path loss (4*pi*d*f/c)^2 as a linear power ratio."""
    if not distance > 0:
        raise NonPositiveInput(f"distance must be positive, got {distance}")
    if not frequency > 0:
        raise NonPositiveInput(f"frequency must be positive, got {frequency}")
    x = 4.0 * math.pi * distance * frequency / SPEED_OF_LIGHT
    return x * x


def fresnel_rates(material: MaterialSpec, frequency: float) -> tuple[float, float, float]:
    """Normal-incidence power reflection R, transmission T, absorption rho.

    Impedances relative to free space: eta_rel = sqrt(mu_r / eps_r).
    """
    eps = material.permittivity(frequency)
    mu = material.permeability(frequency)
    eta = math.sqrt(mu / eps)
    r_amp = (eta - 1.0) / (eta + 1.0)
    reflection = r_amp * r_amp
    transmission = 4.0 * eta / ((eta + 1.0) * (eta + 1.0))
    absorption = 1.0 - reflection - transmission
    return reflection, transmission, absorption


def snell_refraction(theta_i: float, material: MaterialSpec, frequency: float) -> float:
    """Refraction angle (radians) for incidence from vacuum, per Snell's law."""
    if not (0.0 <= theta_i < math.pi / 2):
        raise NonPositiveInput("incidence angle must lie in [0, pi/2)")
    eps = material.permittivity(frequency)
    mu = material.permeability(frequency)
    sin_t = math.sin(theta_i) / math.sqrt(eps * mu)
    if sin_t > 1.0:
        raise TotalInternalReflection(
            f"sin(theta_t) = {sin_t:.6f} > 1 (eps*mu < 1 incidence)"
        )
    return math.asin(sin_t)


def _axis_images(coord: float, lo: float, hi: float, max_order: int):
    """1-D image positions along one axis of the room.

    Yields (position, bounces_min_wall, bounces_max_wall).  With the source at
    relative offset a in a segment of length L, images sit at +-a + 2kL; the
    image (parity p in {0,1}, shift k) reflects |k - p| times off the min wall
    and |k| times off the max wall.
    """
    length = hi - lo
    a = coord - lo
    out = []
    for p in (0, 1):
        base = a if p == 0 else -a
        k = 0
        while True:
            added = False
            for kk in ((0,) if k == 0 else (k, -k)):
                n_min = abs(kk - p)
                n_max = abs(kk)
                if n_min + n_max <= max_order:
                    out.append((lo + base + 2.0 * kk * length, n_min, n_max))
                    added = True
            if not added:
                break
            k += 1
    return out


def enumerate_paths(scene: SceneDescriptor, tx: TxDescriptor) -> list[PathContribution]:
    """Line-of-sight plus image-source reflection paths up to the scene order.

    Deterministic: paths are sorted by (length, image lattice key).
    """
    room, rx = scene.room, scene.rx.center
    if not room.contains(tx.position):
        raise TxOutsideRoom(f"tx {tx.position} outside room {room.lo}..{room.hi}")
    if np.linalg.norm(tx.position - rx) < 0.05:
        raise TxCoincidentWithRx("tx within 5 cm of rx center")

    order = scene.max_reflection_order
    f = tx.frequency
    # sqrt of power reflection rate per wall, evaluated once per frequency
    wall_amp = [math.sqrt(fresnel_rates(m, f)[0]) for m in scene.wall_materials]

    per_axis = [
        _axis_images(tx.position[ax], room.lo[ax], room.hi[ax], order)
        for ax in range(3)
    ]

    raw = []
    for xi, (px, nx0, nx1) in enumerate(per_axis[0]):
        ox = nx0 + nx1
        if ox > order:
            continue
        for yi, (py, ny0, ny1) in enumerate(per_axis[1]):
            oy = ox + ny0 + ny1
            if oy > order:
                continue
            for zi, (pz, nz0, nz1) in enumerate(per_axis[2]):
                total = oy + nz0 + nz1
                if total > order:
                    continue
                img = np.array([px, py, pz])
                vec = img - rx
                length = float(np.linalg.norm(vec))
                amp = 1.0 / math.sqrt(fspl(length, f))
                for wall_idx, bounces in enumerate((nx0, nx1, ny0, ny1, nz0, nz1)):
                    if bounces:
                        amp *= wall_amp[wall_idx] ** bounces
                phase = -2.0 * math.pi * f * length / SPEED_OF_LIGHT + math.pi * total
                d = vec / length
                azim = math.degrees(math.atan2(d[1], d[0])) % 360.0
                elev = math.degrees(math.asin(max(-1.0, min(1.0, d[2]))))
                raw.append(
                    (
                        length,
                        (xi, yi, zi),
                        PathContribution(
                            gain=amp * complex(math.cos(phase), math.sin(phase)),
                            aoa_azim=azim,
                            aoa_elev=elev,
                            length=length,
                            order=total,
                        ),
                    )
                )
    raw.sort(key=lambda t: (t[0], t[1]))
    return [t[2] for t in raw]


def synthesize_pas(
    scene: SceneDescriptor, tx: TxDescriptor, grid: AngularGrid
) -> PASMap:
    """Beamformed per-cell power from the multipath set, max-normalized."""
    paths = enumerate_paths(scene, tx)
    dirs = all_cell_directions(grid).reshape(-1, 3)

    sigma = scene.beamwidth_deg / GAUSS_BEAM_FWHM
    cutoff = BEAM_CUTOFF_SIGMA * sigma

    response = np.zeros(dirs.shape[0], dtype=np.complex128)
    for path in paths:
        a, b = path.aoa_azim * DEG, path.aoa_elev * DEG
        cb = math.cos(b)
        aoa = np.array([cb * math.cos(a), cb * math.sin(a), math.sin(b)])
        ang = np.degrees(np.arccos(np.clip(dirs @ aoa, -1.0, 1.0)))
        beam = np.where(ang <= cutoff, np.exp(-0.5 * (ang / sigma) ** 2), 0.0)
        response += beam * path.gain

    power = np.abs(response) ** 2
    raw = PASMap(grid, power.reshape(grid.n_elev, grid.n_azim))
    return normalize_pas(raw)
