"""RF Gaussian primitives: frequency-shared geometry and derived quantities.

The scene stores geometry as structure-of-arrays (means, unit quaternions,
log-scales); per-query RF attributes are produced by the conditioning network
and never stored here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Box
from .errors import ShapeMismatch

SCALE_FLOOR = 1e-4  # meters; hard lower clamp on exp(log_scales)


class RFAttributes(NamedTuple):
    """Per-query RF attributes of one Gaussian."""

    attenuation: complex  # complex propagation loss factor, |.| in (0, 1)
    signal: complex  # complex signal response
    latent: np.ndarray  # local propagation-variation code
    spread: float  # footprint scale factor

# Quaternion convention: (w, x, y, z), normalized before every use.


def quaternion_to_rotation(quats: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (N, 4) array of (not necessarily unit) quats."""
    q = np.asarray(quats, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    n = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / n).T
    rot = np.empty((q.shape[0], 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot[0] if single else rot


def rotation_quaternion_about_z(angle_deg: float) -> np.ndarray:
    half = np.deg2rad(angle_deg) / 2.0
    return np.array([np.cos(half), 0.0, 0.0, np.sin(half)])


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


@dataclass
class GaussianGeometry:
    """Single-primitive view: mean (m), rotation quaternion, log-scales."""

    mean: np.ndarray
    rotation: np.ndarray
    log_scales: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64)
        if self.mean.shape != (3,) or self.rotation.shape != (4,) or self.log_scales.shape != (3,):
            raise ShapeMismatch("geometry fields must be 3-, 4-, 3-vectors")


def covariance(geom: GaussianGeometry) -> np.ndarray:
    """Sigma = R S S^T R^T with S = diag(exp(log_scales)); always SPD."""
    rot = quaternion_to_rotation(geom.rotation)
    m = rot * np.exp(geom.log_scales)[None, :]
    return m @ m.T


def density(geom: GaussianGeometry, x: np.ndarray) -> float:
    """Unnormalized ellipsoidal density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu))."""
    diff = np.asarray(x, dtype=np.float64) - geom.mean
    sol = np.linalg.solve(covariance(geom), diff)
    return float(np.exp(-0.5 * diff @ sol))


class GaussianScene:
    """All primitives of one scene, plus the bounds used for clamping/encoding."""

    def __init__(
        self,
        means: np.ndarray,
        quaternions: np.ndarray,
        log_scales: np.ndarray,
        bounds: Box,
    ):
        means = np.ascontiguousarray(means, dtype=np.float64)
        quaternions = np.ascontiguousarray(quaternions, dtype=np.float64)
        log_scales = np.ascontiguousarray(log_scales, dtype=np.float64)
        n = means.shape[0]
        if n < 1:
            raise ShapeMismatch("scene needs at least one Gaussian")
        if means.shape != (n, 3) or quaternions.shape != (n, 4) or log_scales.shape != (n, 3):
            raise ShapeMismatch("scene arrays must be (N,3), (N,4), (N,3)")
        if not np.all(np.isfinite(means)):
            raise ShapeMismatch("means must be finite")
        self.means = means
        self.quaternions = quaternions
        self.log_scales = log_scales
        self.bounds = bounds

    @property
    def n_gaussians(self) -> int:
        return self.means.shape[0]

    @property
    def log_scale_max(self) -> float:
        return float(np.log(max(self.bounds.diagonal, SCALE_FLOOR)))

    def geometry(self, i: int) -> GaussianGeometry:
        return GaussianGeometry(self.means[i], self.quaternions[i], self.log_scales[i])

    def normalize_quaternions(self) -> None:
        self.quaternions /= np.linalg.norm(self.quaternions, axis=1, keepdims=True)

    def clamp_scales(self) -> None:
        np.clip(
            self.log_scales, np.log(SCALE_FLOOR), self.log_scale_max, out=self.log_scales
        )

    def content_hashes(self) -> np.ndarray:
        """Permutation-independent uint64 key per Gaussian (depth tie-break).

        Equal parameter vectors hash equal; storage order never enters.
        """
        mult = np.uint64(0x9E3779B97F4A7C15)
        mix = np.uint64(0xBF58476D1CE4E5B9)
        h = np.zeros(self.n_gaussians, dtype=np.uint64)
        for arr in (self.means, self.quaternions, self.log_scales):
            bits = arr.view(np.uint64)
            for col in range(bits.shape[1]):
                h = (h * mult) ^ (bits[:, col] * mix)
                h ^= h >> np.uint64(31)
        return h

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.means.copy(), self.quaternions.copy(), self.log_scales.copy(), self.bounds
        )


def default_initial_scale(n: int, bounds: Box) -> float:
    """Coverage heuristic: room diagonal divided by cbrt(N)."""
    return bounds.diagonal / n ** (1.0 / 3.0)


def init_scene(
    n: int, bounds: Box, seed: int, initial_scale: float | None = None
) -> GaussianScene:
    """Random scene: uniform means, uniform unit quaternions, isotropic scales."""
    if n < 1:
        raise ShapeMismatch("n must be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.uniform(bounds.lo, bounds.hi, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    if initial_scale is None:
        initial_scale = default_initial_scale(n, bounds)
    initial_scale = min(max(initial_scale, SCALE_FLOOR), max(bounds.diagonal, SCALE_FLOOR))
    log_scales = np.full((n, 3), np.log(initial_scale))
    return GaussianScene(means, quats, log_scales, bounds)


def prune_low_contribution(
    scene: GaussianScene, keep_mask: np.ndarray
) -> GaussianScene:
    """Drop primitives flagged False; used by the optional prune pass."""
    if keep_mask.shape != (scene.n_gaussians,):
        raise ShapeMismatch("keep mask must have one entry per Gaussian")
    if not np.any(keep_mask):
        raise ShapeMismatch("prune would remove every Gaussian")
    return GaussianScene(
        scene.means[keep_mask],
        scene.quaternions[keep_mask],
        scene.log_scales[keep_mask],
        scene.bounds,
    )
