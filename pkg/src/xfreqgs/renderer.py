"""Receiver-centered angular splatting of RF Gaussians.

Pipeline: per-Gaussian attributes from the conditioning network, projection
onto the (azimuth, elevation) chart, spread-scaled anisotropic footprints,
contributor binning under a Mahalanobis cutoff, and depth-ordered complex
accumulation per angular cell.  The squared magnitude of the accumulated
response, max-normalized, is the predicted PAS.

The forward pass records every intermediate needed for an exact reverse-mode
sweep (``render_backward``); gradients are validated against central finite
differences in the tests.

Projection chart: a Gaussian at offset v from the RX center projects to
(alpha, beta) degrees of v's direction.  The chart Jacobian (degrees per
meter) is analytic; so is its derivative w.r.t. the position, which the
backward needs because the footprint covariance depends on the Jacobian.
The sampling-sphere radius cancels under this chart and has no effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (
    DEG,
    AngularGrid,
    Box,
    PASMap,
    ReceiverConfig,
    TxDescriptor,
    wrap_azimuth_deg,
)
from .errors import (
    AllZeroMap,
    GaussianAtReceiver,
    MisalignedAttributes,
    ShapeMismatch,
    StaleGraph,
)
from .network import (
    NetGrads,
    NetTrace,
    NetworkParams,
    backward_encoded,
    encode_batch,
    forward_encoded,
    mean_encoding_backward,
)
from .scene import GaussianGeometry, GaussianScene, RFAttributes, quaternion_to_rotation

K_DEG = 180.0 / math.pi
RX_EPSILON_M = 1e-6  # Gaussians closer than this to the RX center are skipped


@dataclass(frozen=True)
class RenderOptions:
    cutoff_sigma: float = 3.0  # footprint support: cells beyond this never contribute
    cull_sigma: float | None = None  # candidate search radius; None = cutoff_sigma.
    # Raising cull_sigma widens the searched bounding boxes without changing
    # the support test, so the result is invariant (exhaustive-search oracle).
    footprint_floor_deg2: float = 0.09  # added to the projected covariance diagonal
    freq_modulation: bool = True  # off: frequency encoding zeroed, spread forced to 1
    adaptive_footprint: bool = True  # off: fixed circular footprint, one cell sigma
    pole_limit_deg: float = 89.999
    pole_eval_deg: float = 89.9
    deterministic: bool = True
    clamp_tx: bool = False

    @property
    def search_sigma(self) -> float:
        return self.cutoff_sigma if self.cull_sigma is None else self.cull_sigma


@dataclass
class ProjectedGaussian:
    """One Gaussian on the angular chart."""

    center_uv: np.ndarray  # (azimuth deg, elevation deg)
    cov2d: np.ndarray  # 2x2, deg^2
    cov2d_freq: np.ndarray  # 2x2, deg^2, spread-scaled
    depth: float
    source_index: int
    pole: bool = False


@dataclass
class RayContributorList:
    """Per-cell contributor lists, each sorted by (depth, tie key, index)."""

    grid: AngularGrid
    cells: list  # list over cells of list[(source_index, footprint_weight)]

    def nonempty_cells(self) -> int:
        return sum(1 for c in self.cells if c)


@dataclass
class ComplexResponseGrid:
    grid: AngularGrid
    values: np.ndarray  # complex128 (n_elev, n_azim)


@dataclass
class RenderGraph:
    """Recorded forward pass; consumed by the backward sweep."""

    scene: GaussianScene
    params: NetworkParams
    tx: TxDescriptor
    rx: ReceiverConfig
    grid: AngularGrid
    options: RenderOptions
    trace: NetTrace
    s_re: np.ndarray
    s_im: np.ndarray
    d_re: np.ndarray
    d_im: np.ndarray
    v: np.ndarray
    dist: np.ndarray
    u_alpha: np.ndarray
    u_beta: np.ndarray
    pole: np.ndarray
    frozen: np.ndarray
    active: np.ndarray
    jac: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    c_triple: np.ndarray
    cf_triple: np.ndarray
    conic: np.ndarray
    pair_gauss: np.ndarray
    pair_cell: np.ndarray
    seg_start: np.ndarray
    dalpha: np.ndarray
    dbeta: np.ndarray
    weights: np.ndarray
    pre_re: np.ndarray
    pre_im: np.ndarray
    resp_re: np.ndarray
    resp_im: np.ndarray
    power: np.ndarray
    peak_index: int
    peak: float
    out: np.ndarray
    n_skipped: int
    fingerprint: bytes


@dataclass
class RenderGrads:
    means: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    net: NetGrads


# -- single-Gaussian stage API ----------------------------------------------


def project(geom: GaussianGeometry, rx: ReceiverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unit direction from the RX center and its (azimuth, elevation) in deg."""
    v = geom.mean - rx.center
    dist = float(np.linalg.norm(v))
    if dist < RX_EPSILON_M:
        raise GaussianAtReceiver(f"Gaussian within {RX_EPSILON_M} m of RX center")
    d_hat = v / dist
    alpha = math.degrees(math.atan2(d_hat[1], d_hat[0])) % 360.0
    beta = math.degrees(math.asin(max(-1.0, min(1.0, d_hat[2]))))
    return d_hat, np.array([alpha, beta])


def chart_jacobian(v: np.ndarray) -> np.ndarray:
    """2x3 Jacobian of (azimuth deg, elevation deg) w.r.t. the offset v."""
    x, y, z = v
    rho2 = x * x + y * y
    rho = math.sqrt(rho2)
    r2 = rho2 + z * z
    return K_DEG * np.array(
        [
            [-y / rho2, x / rho2, 0.0],
            [-x * z / (rho * r2), -y * z / (rho * r2), rho / r2],
        ]
    )


def projected_covariance(
    geom: GaussianGeometry,
    rx: ReceiverConfig,
    options: RenderOptions | None = None,
) -> np.ndarray:
    """J Sigma J^T plus the footprint floor; symmetric positive definite."""
    options = options or RenderOptions()
    v = geom.mean - rx.center
    dist = float(np.linalg.norm(v))
    if dist < RX_EPSILON_M:
        raise GaussianAtReceiver(f"Gaussian within {RX_EPSILON_M} m of RX center")
    beta = math.degrees(math.asin(max(-1.0, min(1.0, v[2] / dist))))
    if abs(beta) > options.pole_limit_deg:
        v = _clamped_pole_offset(v, dist, math.copysign(options.pole_eval_deg, beta))
    jac = chart_jacobian(v)
    rot = quaternion_to_rotation(geom.rotation)
    m0 = rot * np.exp(geom.log_scales)[None, :]
    sigma = m0 @ m0.T
    cov = jac @ sigma @ jac.T
    cov = 0.5 * (cov + cov.T) + options.footprint_floor_deg2 * np.eye(2)
    return cov


def frequency_footprint(
    cov2d: np.ndarray, spread: float, spread_min: float = 0.25, spread_max: float = 4.0
) -> np.ndarray:
    """Spread-scaled footprint covariance; eigenvectors are unchanged."""
    if not (spread_min <= spread <= spread_max):
        raise ShapeMismatch(
            f"spread {spread} outside [{spread_min}, {spread_max}]"
        )
    return spread * np.asarray(cov2d, dtype=np.float64)


def _clamped_pole_offset(v: np.ndarray, dist: float, eval_beta_deg: float) -> np.ndarray:
    """Same azimuth and range, elevation clamped away from the chart pole."""
    alpha = math.atan2(v[1], v[0])
    b = eval_beta_deg * DEG
    cb = math.cos(b)
    return dist * np.array([cb * math.cos(alpha), cb * math.sin(alpha), math.sin(b)])


# -- batched internals -------------------------------------------------------


def _project_batch(means: np.ndarray, rx: ReceiverConfig, options: RenderOptions):
    """Offsets, ranges, chart coordinates and the pole/skip masks.

    ``pole`` marks Gaussians caught by the top-elevation row; ``frozen``
    marks both chart poles, where the Jacobian is evaluated at a clamped
    elevation and geometry adjoints are dropped.
    """
    v = means - rx.center[None, :]
    dist = np.linalg.norm(v, axis=1)
    active = dist >= RX_EPSILON_M
    safe = np.where(active, dist, 1.0)
    d_hat = v / safe[:, None]
    alpha = np.degrees(np.arctan2(d_hat[:, 1], d_hat[:, 0])) % 360.0
    beta = np.degrees(np.arcsin(np.clip(d_hat[:, 2], -1.0, 1.0)))
    pole = active & (beta > options.pole_limit_deg)
    frozen = active & (np.abs(beta) > options.pole_limit_deg)
    return v, dist, alpha, beta, pole, frozen, active


def _jacobian_batch(
    v: np.ndarray, dist: np.ndarray, frozen: np.ndarray, active: np.ndarray,
    options: RenderOptions,
) -> np.ndarray:
    """Chart Jacobians; rows near either chart pole use a clamped elevation."""
    v_eval = v.copy()
    for i in np.where(frozen)[0]:
        sign = 1.0 if v[i, 2] >= 0 else -1.0
        v_eval[i] = _clamped_pole_offset(v[i], dist[i], sign * options.pole_eval_deg)
    x, y, z = v_eval[:, 0], v_eval[:, 1], v_eval[:, 2]
    rho2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.sqrt(rho2)
        r2 = rho2 + z * z
        jac = np.zeros((v.shape[0], 2, 3))
        jac[:, 0, 0] = -y / rho2
        jac[:, 0, 1] = x / rho2
        jac[:, 1, 0] = -x * z / (rho * r2)
        jac[:, 1, 1] = -y * z / (rho * r2)
        jac[:, 1, 2] = rho / r2
    jac *= K_DEG
    jac[~active] = 0.0
    return jac


def _covariance_batch(scene: GaussianScene):
    rot = quaternion_to_rotation(scene.quaternions)
    scales = np.exp(scene.log_scales)
    m0 = rot * scales[:, None, :]
    sigma = m0 @ np.swapaxes(m0, 1, 2)
    return rot, scales, sigma


def _footprint_triples(
    jac: np.ndarray, sigma: np.ndarray, spread: np.ndarray, grid: AngularGrid,
    options: RenderOptions,
):
    """(C, C_freq, conic) symmetric 2x2 matrices as (xx, xy, yy) triples."""
    n = jac.shape[0]
    if options.adaptive_footprint:
        js = jac @ sigma  # (N, 2, 3)
        c_xx = np.einsum("nk,nk->n", js[:, 0, :], jac[:, 0, :])
        c_xy = np.einsum("nk,nk->n", js[:, 0, :], jac[:, 1, :])
        c_yy = np.einsum("nk,nk->n", js[:, 1, :], jac[:, 1, :])
        c_triple = np.stack(
            [c_xx + options.footprint_floor_deg2, c_xy, c_yy + options.footprint_floor_deg2],
            axis=1,
        )
        cf_triple = spread[:, None] * c_triple
    else:
        c_triple = np.tile(
            np.array([grid.azim_step**2, 0.0, grid.elev_step**2]), (n, 1)
        )
        cf_triple = c_triple.copy()
    det = cf_triple[:, 0] * cf_triple[:, 2] - cf_triple[:, 1] ** 2
    inv_det = 1.0 / det
    conic = np.stack(
        [cf_triple[:, 2] * inv_det, -cf_triple[:, 1] * inv_det, cf_triple[:, 0] * inv_det],
        axis=1,
    )
    return c_triple, cf_triple, conic


def _depth_order(dist: np.ndarray, tie_key: np.ndarray) -> np.ndarray:
    """Gaussian traversal order: depth, then content key, then index."""
    return np.lexsort((np.arange(dist.shape[0]), tie_key, dist)).astype(np.int64)


def _build_pairs(
    order, u_alpha, u_beta, conic, bb_da, bb_db, pole, active, grid, cutoff_sigma
):
    """Contributor pairs grouped by cell, depth-ordered within each cell."""
    pair_gauss, pair_cell, dalpha, dbeta, m2 = _kernels.find_pairs(
        order,
        np.ascontiguousarray(u_alpha),
        np.ascontiguousarray(u_beta),
        np.ascontiguousarray(conic[:, 0]),
        np.ascontiguousarray(conic[:, 1]),
        np.ascontiguousarray(conic[:, 2]),
        np.ascontiguousarray(bb_da),
        np.ascontiguousarray(bb_db),
        pole.astype(np.uint8),
        active.astype(np.uint8),
        grid.n_elev,
        grid.n_azim,
        grid.elev_step,
        grid.azim_step,
        cutoff_sigma * cutoff_sigma,
    )
    seg_start, pair_gauss, pair_cell, dalpha, dbeta, m2 = _kernels.group_by_cell(
        pair_cell, grid.n_cells, pair_gauss, dalpha, dbeta, m2
    )
    return pair_gauss, pair_cell, dalpha, dbeta, m2, seg_start


def render(
    scene: GaussianScene,
    params: NetworkParams,
    tx: TxDescriptor,
    rx: ReceiverConfig,
    grid: AngularGrid,
    options: RenderOptions | None = None,
) -> tuple[PASMap, RenderGraph]:
    """Full forward pass; returns the normalized PAS and the recorded graph."""
    options = options or RenderOptions()
    cfg = params.cfg
    n = scene.n_gaussians

    encoded = encode_batch(
        params, tx, scene.means, scene.bounds,
        freq_modulation=options.freq_modulation, clamp_tx=options.clamp_tx,
    )
    trace = forward_encoded(params, encoded, freq_modulation=options.freq_modulation)
    s_re = trace.sig_amp * np.cos(trace.sig_phase)
    s_im = trace.sig_amp * np.sin(trace.sig_phase)
    d_re = trace.att_amp * np.cos(trace.att_phase)
    d_im = trace.att_amp * np.sin(trace.att_phase)

    v, dist, u_alpha, u_beta, pole, frozen, active = _project_batch(
        scene.means, rx, options
    )
    jac = _jacobian_batch(v, dist, frozen, active, options)
    rot, scales, sigma = _covariance_batch(scene)
    c_triple, cf_triple, conic = _footprint_triples(
        jac, sigma, trace.spread, grid, options
    )

    search = max(options.search_sigma, options.cutoff_sigma)
    bb_da = search * np.sqrt(np.maximum(cf_triple[:, 0], 0.0))
    bb_db = search * np.sqrt(np.maximum(cf_triple[:, 2], 0.0))

    order = _depth_order(dist, scene.content_hashes())
    pair_gauss, pair_cell, dalpha, dbeta, m2, seg_start = _build_pairs(
        order, u_alpha, u_beta, conic, bb_da, bb_db, pole, active, grid,
        options.cutoff_sigma,
    )
    weights = np.exp(-0.5 * m2)

    resp_re, resp_im, pre_re, pre_im = _kernels.accumulate_forward(
        seg_start, pair_gauss, weights, s_re, s_im, d_re, d_im
    )
    power = resp_re * resp_re + resp_im * resp_im
    peak_index = int(np.argmax(power))
    peak = float(power[peak_index])
    if peak <= 0.0:
        raise AllZeroMap("render produced an all-zero power map")
    out = power / peak

    graph = RenderGraph(
        scene=scene,
        params=params,
        tx=tx,
        rx=rx,
        grid=grid,
        options=options,
        trace=trace,
        s_re=s_re,
        s_im=s_im,
        d_re=d_re,
        d_im=d_im,
        v=v,
        dist=dist,
        u_alpha=u_alpha,
        u_beta=u_beta,
        pole=pole,
        frozen=frozen,
        active=active,
        jac=jac,
        rot=rot,
        scales=scales,
        c_triple=c_triple,
        cf_triple=cf_triple,
        conic=conic,
        pair_gauss=pair_gauss,
        pair_cell=pair_cell,
        seg_start=seg_start,
        dalpha=dalpha,
        dbeta=dbeta,
        weights=weights,
        pre_re=pre_re,
        pre_im=pre_im,
        resp_re=resp_re,
        resp_im=resp_im,
        power=power,
        peak_index=peak_index,
        peak=peak,
        out=out,
        n_skipped=int(np.sum(~active)),
        fingerprint=_fingerprint(scene, params),
    )
    pas = PASMap(grid, out.reshape(grid.n_elev, grid.n_azim))
    return pas, graph


def _fingerprint(scene: GaussianScene, params: NetworkParams) -> bytes:
    import hashlib

    h = hashlib.blake2b(digest_size=16)
    h.update(scene.means.tobytes())
    h.update(scene.quaternions.tobytes())
    h.update(scene.log_scales.tobytes())
    h.update(params.trunk_w[0].tobytes())
    h.update(params.head_w[0].tobytes())
    return h.digest()


# -- quaternion derivative helpers -------------------------------------------


def _rotation_derivatives(quats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dR/dn for normalized quats n plus the normalization data.

    Returns (dr, n) with dr of shape (N, 4, 3, 3).
    """
    q = quats
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    nq = q / norm
    w, x, y, z = nq.T
    zeros = np.zeros_like(w)
    dr = np.empty((q.shape[0], 4, 3, 3))
    dr[:, 0] = 2.0 * np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )
    dr[:, 1] = 2.0 * np.stack(
        [
            np.stack([zeros, y, z], axis=-1),
            np.stack([y, -2 * x, -w], axis=-1),
            np.stack([z, w, -2 * x], axis=-1),
        ],
        axis=-2,
    )
    dr[:, 2] = 2.0 * np.stack(
        [
            np.stack([-2 * y, x, w], axis=-1),
            np.stack([x, zeros, z], axis=-1),
            np.stack([-w, z, -2 * y], axis=-1),
        ],
        axis=-2,
    )
    dr[:, 3] = 2.0 * np.stack(
        [
            np.stack([-2 * z, -w, x], axis=-1),
            np.stack([w, -2 * z, y], axis=-1),
            np.stack([x, y, zeros], axis=-1),
        ],
        axis=-2,
    )
    return dr, nq


def _chart_hessian_contraction(v: np.ndarray, adj_jac: np.ndarray) -> np.ndarray:
    """Sum_ab adj_J[a, b] * d2(chart_a)/dv_b dv, vectorized over Gaussians."""
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    rho2 = x * x + y * y
    rho = np.sqrt(rho2)
    r2 = rho2 + z * z
    rho4 = rho2 * rho2
    r4 = r2 * r2

    # Hessian of azimuth (only xy block nonzero)
    ha_xx = 2.0 * x * y / rho4
    ha_xy = (y * y - x * x) / rho4
    ha_yy = -2.0 * x * y / rho4

    # Hessian of elevation
    denom = rho * rho2 * r4  # rho^3 r^4
    hb_xx = z * (2.0 * x * x * rho2 + x * x * r2 - rho2 * r2) / denom
    hb_xy = x * y * z * (3.0 * rho2 + z * z) / denom
    hb_yy = z * (2.0 * y * y * rho2 + y * y * r2 - rho2 * r2) / denom
    hb_xz = -x * (rho2 - z * z) / (rho * r4)
    hb_yz = -y * (rho2 - z * z) / (rho * r4)
    hb_zz = -2.0 * z * rho / r4

    a0, a1, a2 = adj_jac[:, 0, 0], adj_jac[:, 0, 1], adj_jac[:, 0, 2]
    b0, b1, b2 = adj_jac[:, 1, 0], adj_jac[:, 1, 1], adj_jac[:, 1, 2]

    gx = a0 * ha_xx + a1 * ha_xy + b0 * hb_xx + b1 * hb_xy + b2 * hb_xz
    gy = a0 * ha_xy + a1 * ha_yy + b0 * hb_xy + b1 * hb_yy + b2 * hb_yz
    gz = b0 * hb_xz + b1 * hb_yz + b2 * hb_zz
    # note a2 multiplies d(dalpha/dz)/dv = 0
    return K_DEG * np.stack([gx, gy, gz], axis=1)


def render_backward(graph: RenderGraph, adj_out: np.ndarray) -> RenderGrads:
    """Exact adjoints of render() w.r.t. scene geometry and network params.

    adj_out is the loss adjoint of the normalized map, flattened to (K,).
    """
    if graph.fingerprint != _fingerprint(graph.scene, graph.params):
        raise StaleGraph("parameters changed since this graph was recorded")

    scene, params, options = graph.scene, graph.params, graph.options
    grid = graph.grid
    n = scene.n_gaussians
    adj_out = np.asarray(adj_out, dtype=np.float64).reshape(-1)
    if adj_out.shape[0] != grid.n_cells:
        raise ShapeMismatch("loss adjoint does not match the grid")

    # normalization: out = power / peak, subgradient through the peak cell.
    # dot(adj, power) / peak^2 is folded as dot(adj, out) / peak so a tiny
    # peak cannot underflow the denominator.
    peak = graph.peak
    adj_power = adj_out / peak
    adj_power[graph.peak_index] -= np.dot(adj_out, graph.out) / peak

    # power = |R|^2
    adj_r_re = 2.0 * adj_power * graph.resp_re
    adj_r_im = 2.0 * adj_power * graph.resp_im

    adj_w, adj_s_re, adj_s_im, adj_d_re, adj_d_im = _kernels.accumulate_backward(
        graph.seg_start,
        graph.pair_gauss,
        graph.weights,
        graph.s_re,
        graph.s_im,
        graph.d_re,
        graph.d_im,
        graph.pre_re,
        graph.pre_im,
        adj_r_re,
        adj_r_im,
        n,
    )

    trace = graph.trace
    # complex attributes -> amplitude/phase adjoints
    cos_sp, sin_sp = np.cos(trace.sig_phase), np.sin(trace.sig_phase)
    cos_ap, sin_ap = np.cos(trace.att_phase), np.sin(trace.att_phase)
    adj_sig_amp = cos_sp * adj_s_re + sin_sp * adj_s_im
    adj_sig_phase = trace.sig_amp * (-sin_sp * adj_s_re + cos_sp * adj_s_im)
    adj_att_amp = cos_ap * adj_d_re + sin_ap * adj_d_im
    adj_att_phase = trace.att_amp * (-sin_ap * adj_d_re + cos_ap * adj_d_im)

    # weights: w = exp(-m2 / 2), m2 = a da^2 + 2 b da db + c db^2
    adj_ca, adj_cb, adj_cc, adj_u_alpha, adj_u_beta = _kernels.weight_backward(
        graph.pair_gauss,
        graph.dalpha,
        graph.dbeta,
        graph.weights,
        adj_w,
        np.ascontiguousarray(graph.conic[:, 0]),
        np.ascontiguousarray(graph.conic[:, 1]),
        np.ascontiguousarray(graph.conic[:, 2]),
        graph.pole.astype(np.uint8),
        n,
    )
    adj_conic = np.stack([adj_ca, adj_cb, adj_cc], axis=1)
    adj_u_alpha[graph.frozen] = 0.0
    adj_u_beta[graph.frozen] = 0.0

    # conic = inv(Cf) in triple form
    p, q, r = graph.cf_triple[:, 0], graph.cf_triple[:, 1], graph.cf_triple[:, 2]
    det = p * r - q * q
    inv_det = 1.0 / det
    adj_inv_det = (
        r * adj_conic[:, 0] - q * adj_conic[:, 1] + p * adj_conic[:, 2]
    )
    adj_det = -inv_det * inv_det * adj_inv_det
    adj_cf = np.empty((n, 3))
    adj_cf[:, 0] = inv_det * adj_conic[:, 2] + r * adj_det
    adj_cf[:, 1] = -inv_det * adj_conic[:, 1] - 2.0 * q * adj_det
    adj_cf[:, 2] = inv_det * adj_conic[:, 0] + p * adj_det

    adj_means = np.zeros((n, 3))
    adj_quats = np.zeros((n, 4))
    adj_log_scales = np.zeros((n, 3))

    if options.adaptive_footprint:
        # Cf = spread * C
        adj_spread = np.einsum("ni,ni->n", graph.c_triple, adj_cf)
        adj_c = trace.spread[:, None] * adj_cf

        # C entries from J Sigma J^T (floor terms are constants)
        adj_cmat = np.zeros((n, 2, 2))
        adj_cmat[:, 0, 0] = adj_c[:, 0]
        adj_cmat[:, 0, 1] = adj_c[:, 1]
        adj_cmat[:, 1, 1] = adj_c[:, 2]

        rot, scales = graph.rot, graph.scales
        m0 = rot * scales[:, None, :]
        sigma = m0 @ np.swapaxes(m0, 1, 2)
        jac = graph.jac
        js = jac @ sigma
        adj_jac = adj_cmat @ js + np.swapaxes(adj_cmat, 1, 2) @ js
        adj_sigma = np.swapaxes(jac, 1, 2) @ adj_cmat @ jac

        adj_m0 = (adj_sigma + np.swapaxes(adj_sigma, 1, 2)) @ m0
        adj_rot = adj_m0 * scales[:, None, :]
        adj_scales = np.einsum("nij,nij->nj", rot, adj_m0)
        adj_log_scales += adj_scales * scales

        dr, _ = _rotation_derivatives(scene.quaternions)
        adj_nq = np.einsum("nqij,nij->nq", dr, adj_rot)
        norm = np.linalg.norm(scene.quaternions, axis=1, keepdims=True)
        nq = scene.quaternions / norm
        adj_quats += (adj_nq - nq * np.einsum("nq,nq->n", nq, adj_nq)[:, None]) / norm

        # footprint Jacobian's own position dependence (pole rows frozen)
        adj_jac[graph.frozen] = 0.0
        adj_jac[~graph.active] = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            hess = _chart_hessian_contraction(graph.v, adj_jac)
        hess[graph.frozen] = 0.0
        hess[~graph.active] = 0.0
        adj_means += hess
    else:
        adj_spread = np.zeros(n)

    # projection chart: u = (alpha, beta)(v)
    adj_u = np.stack([adj_u_alpha, adj_u_beta], axis=1)
    adj_v = np.einsum("nab,na->nb", graph.jac, adj_u)
    adj_v[graph.frozen] = 0.0
    adj_v[~graph.active] = 0.0
    adj_means += adj_v

    net_grads, adj_encoded = backward_encoded(
        params,
        trace,
        adj_att_amp,
        adj_att_phase,
        adj_sig_amp,
        adj_sig_phase,
        adj_spread,
    )
    adj_means += mean_encoding_backward(
        params.cfg, scene.means, scene.bounds, adj_encoded
    )

    return RenderGrads(
        means=adj_means,
        quaternions=adj_quats,
        log_scales=adj_log_scales,
        net=net_grads,
    )


# -- list-based stage operations (shared kernels underneath) ------------------


def bin_contributors(
    projected: list[ProjectedGaussian],
    grid: AngularGrid,
    cutoff_sigma: float = 3.0,
    tie_key: np.ndarray | None = None,
) -> RayContributorList:
    """Contributor lists per cell under the Mahalanobis cutoff.

    Cells are keyed by (depth, tie_key, source order); tie_key defaults to
    zeros so equal depths fall back to ascending source index.
    """
    n = len(projected)
    u_alpha = np.array([float(p.center_uv[0]) for p in projected])
    u_beta = np.array([float(p.center_uv[1]) for p in projected])
    depth = np.array([p.depth for p in projected])
    pole = np.array([p.pole for p in projected], dtype=bool)
    cf = np.stack(
        [
            np.array([p.cov2d_freq[0, 0] for p in projected]),
            np.array([p.cov2d_freq[0, 1] for p in projected]),
            np.array([p.cov2d_freq[1, 1] for p in projected]),
        ],
        axis=1,
    )
    det = cf[:, 0] * cf[:, 2] - cf[:, 1] ** 2
    inv_det = 1.0 / det
    conic = np.stack(
        [cf[:, 2] * inv_det, -cf[:, 1] * inv_det, cf[:, 0] * inv_det], axis=1
    )
    bb_da = cutoff_sigma * np.sqrt(np.maximum(cf[:, 0], 0.0))
    bb_db = cutoff_sigma * np.sqrt(np.maximum(cf[:, 2], 0.0))
    if tie_key is None:
        tie_key = np.zeros(n, dtype=np.uint64)

    order = _depth_order(depth, tie_key)
    pair_gauss, pair_cell, _, _, m2, seg_start = _build_pairs(
        order, u_alpha, u_beta, conic, bb_da, bb_db, pole,
        np.ones(n, dtype=bool), grid, cutoff_sigma,
    )
    weights = np.exp(-0.5 * m2)

    source = np.array([p.source_index for p in projected])
    cells = []
    for k in range(grid.n_cells):
        lo, hi = seg_start[k], seg_start[k + 1]
        cells.append(
            [(int(source[pair_gauss[j]]), float(weights[j])) for j in range(lo, hi)]
        )
    return RayContributorList(grid=grid, cells=cells)


def accumulate(
    contribs: RayContributorList,
    attrs: list[RFAttributes],
    projected: list[ProjectedGaussian],
    grid: AngularGrid,
) -> ComplexResponseGrid:
    """Depth-ordered complex accumulation using the production kernel."""
    n = len(attrs)
    if len(projected) != n:
        raise MisalignedAttributes("attribute list length != projected list length")
    index_of = {p.source_index: i for i, p in enumerate(projected)}
    if len(index_of) != n:
        raise MisalignedAttributes("duplicate source indices")

    pair_gauss, pair_cell, weights = [], [], []
    for cell, entries in enumerate(contribs.cells):
        for src, w in entries:
            if src not in index_of:
                raise MisalignedAttributes(f"contributor {src} missing from attribute list")
            pair_gauss.append(index_of[src])
            pair_cell.append(cell)
            weights.append(w)
    pair_gauss = np.asarray(pair_gauss, dtype=np.int64)
    pair_cell = np.asarray(pair_cell, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    seg_start = np.searchsorted(
        pair_cell, np.arange(grid.n_cells + 1), side="left"
    ).astype(np.int64)

    s = np.array([at.signal for at in attrs], dtype=np.complex128)
    d = np.array([at.attenuation for at in attrs], dtype=np.complex128)
    r_re, r_im, _, _ = _kernels.accumulate_forward(
        seg_start,
        pair_gauss,
        weights,
        np.ascontiguousarray(s.real),
        np.ascontiguousarray(s.imag),
        np.ascontiguousarray(d.real),
        np.ascontiguousarray(d.imag),
    )
    values = (r_re + 1j * r_im).reshape(grid.n_elev, grid.n_azim)
    return ComplexResponseGrid(grid=grid, values=values)


def project_scene(
    scene: GaussianScene,
    spreads: np.ndarray,
    rx: ReceiverConfig,
    options: RenderOptions | None = None,
    grid: AngularGrid | None = None,
) -> list[ProjectedGaussian]:
    """List-based projection of a whole scene (skips at-receiver Gaussians)."""
    options = options or RenderOptions()
    grid = grid or AngularGrid(90, 360)
    v, dist, alpha, beta, pole, frozen, active = _project_batch(
        scene.means, rx, options
    )
    jac = _jacobian_batch(v, dist, frozen, active, options)
    _, _, sigma = _covariance_batch(scene)
    c_triple, cf_triple, _ = _footprint_triples(
        jac, sigma, np.asarray(spreads, dtype=np.float64), grid, options
    )
    out = []
    for i in range(scene.n_gaussians):
        if not active[i]:
            continue
        c = np.array(
            [[c_triple[i, 0], c_triple[i, 1]], [c_triple[i, 1], c_triple[i, 2]]]
        )
        cf = np.array(
            [[cf_triple[i, 0], cf_triple[i, 1]], [cf_triple[i, 1], cf_triple[i, 2]]]
        )
        out.append(
            ProjectedGaussian(
                center_uv=np.array([alpha[i], beta[i]]),
                cov2d=c,
                cov2d_freq=cf,
                depth=float(dist[i]),
                source_index=i,
                pole=bool(pole[i]),
            )
        )
    return out
