"""Map-quality metrics and CDF summaries.

SSIM follows the classic windowed construction (Gaussian 11x11 window,
sigma 1.5, stabilizers (0.01 L)^2 and (0.03 L)^2) with dynamic range L = 1
for normalized maps.  Padding respects the map topology: circular along
azimuth, reflect (edge-duplicating) along elevation.  Both choices make the
window operator self-adjoint, which the analytic SSIM gradient relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import PASMap
from .errors import EmptyList, GridMismatch, GridTooSmall

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel(self) -> np.ndarray:
        half = self.window_size // 2
        t = np.arange(-half, half + 1, dtype=np.float64)
        g = np.exp(-0.5 * (t / self.sigma) ** 2)
        return g / g.sum()


def _check_same_grid(pred: PASMap, gt: PASMap) -> None:
    if pred.grid != gt.grid:
        raise GridMismatch("maps live on different grids")


def psnr(pred: PASMap, gt: PASMap) -> float:
    """10 log10(L^2 / MSE) with L = 1, capped at 99 dB (cap hit at MSE = 0)."""
    _check_same_grid(pred, gt)
    return psnr_values(pred.values, gt.values)


def psnr_values(pred: np.ndarray, gt: np.ndarray) -> float:
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def window_filter(field: np.ndarray, cfg: SsimConfig) -> np.ndarray:
    """Separable window average: reflect over elevation, wrap over azimuth."""
    k = cfg.kernel()
    out = correlate1d(field, k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="wrap")


def _ssim_fields(x: np.ndarray, y: np.ndarray, cfg: SsimConfig):
    mu_x = window_filter(x, cfg)
    mu_y = window_filter(y, cfg)
    e_xx = window_filter(x * x, cfg)
    e_yy = window_filter(y * y, cfg)
    e_xy = window_filter(x * y, cfg)
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + cfg.c1
    a2 = 2.0 * cov + cfg.c2
    b1 = mu_x * mu_x + mu_y * mu_y + cfg.c1
    b2 = var_x + var_y + cfg.c2
    return mu_x, mu_y, a1, a2, b1, b2


def ssim_values(x: np.ndarray, y: np.ndarray, cfg: SsimConfig | None = None) -> float:
    cfg = cfg or SsimConfig()
    if x.shape != y.shape:
        raise GridMismatch("maps must share a shape")
    if min(x.shape) < cfg.window_size:
        raise GridTooSmall(f"need at least {cfg.window_size} cells per axis")
    _, _, a1, a2, b1, b2 = _ssim_fields(
        np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), cfg
    )
    return float(np.mean((a1 * a2) / (b1 * b2)))


def ssim(pred: PASMap, gt: PASMap, cfg: SsimConfig | None = None) -> float:
    _check_same_grid(pred, gt)
    return ssim_values(pred.values, gt.values, cfg)


def ssim_value_and_grad(
    x: np.ndarray, y: np.ndarray, cfg: SsimConfig | None = None
) -> tuple[float, np.ndarray]:
    """SSIM and its exact gradient with respect to the first argument.

    Uses the self-adjointness of the window operator, so the adjoint of the
    filtering step is the filter itself.
    """
    cfg = cfg or SsimConfig()
    if x.shape != y.shape:
        raise GridMismatch("maps must share a shape")
    if min(x.shape) < cfg.window_size:
        raise GridTooSmall(f"need at least {cfg.window_size} cells per axis")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu_x, mu_y, a1, a2, b1, b2 = _ssim_fields(x, y, cfg)

    denom = b1 * b2
    value = float(np.mean((a1 * a2) / denom))

    # upstream adjoint of the per-pixel SSIM map (mean)
    g = np.full_like(x, 1.0 / x.size)
    adj_a1 = g * a2 / denom
    adj_a2 = g * a1 / denom
    common = g * a1 * a2 / (denom * denom)
    adj_b1 = -common * b2
    adj_b2 = -common * b1

    # a1 = 2 mu_x mu_y + C1 ; a2 = 2 (e_xy - mu_x mu_y) + C2
    # b1 = mu_x^2 + mu_y^2 + C1 ; b2 = (e_xx - mu_x^2) + (e_yy - mu_y^2) + C2
    adj_mu_x = (
        adj_a1 * 2.0 * mu_y
        + adj_a2 * (-2.0 * mu_y)
        + adj_b1 * 2.0 * mu_x
        + adj_b2 * (-2.0 * mu_x)
    )
    adj_e_xx = adj_b2
    adj_e_xy = 2.0 * adj_a2

    grad = (
        window_filter(adj_mu_x, cfg)
        + 2.0 * x * window_filter(adj_e_xx, cfg)
        + y * window_filter(adj_e_xy, cfg)
    )
    return value, grad


def quantile_nearest_rank(values, fraction: float) -> float:
    """Nearest-rank order statistic: sorted[ceil(fraction * n) - 1]."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise EmptyList("no values")
    rank = max(1, math.ceil(fraction * v.size))
    return float(v[min(rank, v.size) - 1])


def median(values) -> float:
    return quantile_nearest_rank(values, 0.5)


def cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF sampled at 1% quantile steps.

    Each row is (threshold, fraction of values <= threshold); the row at
    fraction 0.9 is the 90%-CDF reference level.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise EmptyList("no values")
    out = []
    for q in range(1, 101):
        thr = v[max(1, math.ceil(q / 100.0 * v.size)) - 1]
        frac = float(np.searchsorted(v, thr, side="right")) / v.size
        out.append((float(thr), frac))
    return out
