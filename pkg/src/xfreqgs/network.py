"""Conditioning network: maps (TX position, Gaussian center, frequency) to
per-Gaussian RF attributes.

Architecture: positional encoding of the three inputs feeds a six-layer ReLU
MLP (hidden width 256) whose outputs are raw attenuation amp/phase, raw
signal amp/phase, a latent code, and a raw spread.  The latent code, together
with the raw attenuation/signal values, feeds a small two-layer refinement
head whose outputs are added to those four raw values before the output
activations are applied.  Decoding:

    attenuation amp  = sigmoid(raw)            in (0, 1)
    attenuation phase= raw                     radians, unwrapped
    signal amp       = softplus(raw)           >= 0
    signal phase     = raw                     radians, unwrapped
    spread           = s_min + (s_max - s_min) * sigmoid(raw)

Forward and backward passes are hand-written over numpy arrays; the backward
is exact and is checked against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Box, TxDescriptor
from .errors import FrequencyOutOfRange, PositionOutOfBounds, ShapeMismatch
from .scene import RFAttributes

N_TRUNK_LAYERS = 6
RAW_HEAD_INPUTS = 4  # att amp, att phase, sig amp, sig phase


@dataclass(frozen=True)
class NetConfig:
    """Fixed architecture hyperparameters."""

    hidden: int = 256
    head_hidden: int = 32
    latent_dim: int = 16
    pos_bands: int = 10
    freq_bands: int = 4
    f_min: float = 1e9
    f_max: float = 94e9
    spread_min: float = 0.25
    spread_max: float = 4.0

    @property
    def input_dim(self) -> int:
        return 2 * self.pos_bands * 3 * 2 + 2 * self.freq_bands

    @property
    def output_dim(self) -> int:
        return RAW_HEAD_INPUTS + self.latent_dim + 1

    @property
    def head_input_dim(self) -> int:
        return RAW_HEAD_INPUTS + self.latent_dim


def positional_encoding(u: np.ndarray, bands: int) -> np.ndarray:
    """Fourier features: per component, [sin(2^l pi u), cos(2^l pi u)] for
    l = 0..bands-1.  Output dim = 2 * bands * dim(u)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    n, d = u.shape
    out = np.empty((n, d, bands, 2))
    arg = u[:, :, None] * (np.pi * (2.0 ** np.arange(bands)))[None, None, :]
    out[..., 0] = np.sin(arg)
    out[..., 1] = np.cos(arg)
    return out.reshape(n, 2 * bands * d)


def positional_encoding_backward(
    u: np.ndarray, bands: int, adj: np.ndarray
) -> np.ndarray:
    """Adjoint of positional_encoding with respect to u."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    n, d = u.shape
    freqs = np.pi * (2.0 ** np.arange(bands))
    arg = u[:, :, None] * freqs[None, None, :]
    adj = adj.reshape(n, d, bands, 2)
    # d sin = cos * freq ; d cos = -sin * freq
    grad = adj[..., 0] * np.cos(arg) * freqs + adj[..., 1] * (-np.sin(arg)) * freqs
    return grad.sum(axis=2)


def normalize_positions(p: np.ndarray, bounds: Box) -> np.ndarray:
    """Affine map from bounds to [-1, 1]^3 (no clamping)."""
    span = np.where(bounds.size > 0, bounds.size, 1.0)
    return (np.asarray(p, dtype=np.float64) - bounds.lo) * (2.0 / span) - 1.0


def normalize_frequency(frequency: float, f_min: float, f_max: float) -> float:
    """Log-scale map of frequency onto [0, 1]."""
    return float(
        (np.log(frequency) - np.log(f_min)) / (np.log(f_max) - np.log(f_min))
    )


def encode_inputs(
    tx: TxDescriptor,
    center: np.ndarray,
    bounds: Box,
    f_range: tuple[float, float],
    cfg: NetConfig | None = None,
    clamp: bool = False,
) -> np.ndarray:
    """Encoded network input: enc(p_tx) || enc(center) || enc(f_norm).

    Strict by default: TX positions outside bounds or frequencies outside
    f_range raise.  With clamp=True both are clamped into range instead.
    """
    cfg = cfg or NetConfig()
    f_min, f_max = f_range
    f = tx.frequency
    if not (f_min <= f <= f_max):
        if not clamp:
            raise FrequencyOutOfRange(
                f"{f:.4e} Hz outside trained range [{f_min:.4e}, {f_max:.4e}]"
            )
        f = min(max(f, f_min), f_max)
    p_tx = tx.position
    if not bounds.contains(p_tx):
        if not clamp:
            raise PositionOutOfBounds(f"tx position {p_tx} outside {bounds}")
        p_tx = np.clip(p_tx, bounds.lo, bounds.hi)

    enc_tx = positional_encoding(normalize_positions(p_tx, bounds), cfg.pos_bands)
    enc_mu = positional_encoding(normalize_positions(center, bounds), cfg.pos_bands)
    f_norm = normalize_frequency(f, f_min, f_max)
    enc_f = positional_encoding(np.array([[f_norm]]), cfg.freq_bands)
    return np.concatenate([enc_tx[0], enc_mu[0], enc_f[0]])


class NetworkParams:
    """Trunk (6 dense layers) plus refinement head (2 dense layers)."""

    def __init__(self, trunk_w, trunk_b, head_w, head_b, cfg: NetConfig):
        if len(trunk_w) != N_TRUNK_LAYERS or len(trunk_b) != N_TRUNK_LAYERS:
            raise ShapeMismatch("trunk must have exactly 6 weight/bias pairs")
        if len(head_w) != 2 or len(head_b) != 2:
            raise ShapeMismatch("head must have exactly 2 weight/bias pairs")
        self.trunk_w = [np.ascontiguousarray(w, dtype=np.float64) for w in trunk_w]
        self.trunk_b = [np.ascontiguousarray(b, dtype=np.float64) for b in trunk_b]
        self.head_w = [np.ascontiguousarray(w, dtype=np.float64) for w in head_w]
        self.head_b = [np.ascontiguousarray(b, dtype=np.float64) for b in head_b]
        self.cfg = cfg
        self._check_shapes()

    def _check_shapes(self):
        cfg = self.cfg
        dims = [cfg.input_dim] + [cfg.hidden] * (N_TRUNK_LAYERS - 1) + [cfg.output_dim]
        for i in range(N_TRUNK_LAYERS):
            if self.trunk_w[i].shape != (dims[i], dims[i + 1]) or self.trunk_b[
                i
            ].shape != (dims[i + 1],):
                raise ShapeMismatch(
                    f"trunk layer {i}: want {(dims[i], dims[i+1])}, "
                    f"got {self.trunk_w[i].shape}"
                )
        hd = [cfg.head_input_dim, cfg.head_hidden, RAW_HEAD_INPUTS]
        for i in range(2):
            if self.head_w[i].shape != (hd[i], hd[i + 1]) or self.head_b[i].shape != (
                hd[i + 1],
            ):
                raise ShapeMismatch(f"head layer {i}: want {(hd[i], hd[i+1])}")

    @classmethod
    def init(cls, cfg: NetConfig, seed: int) -> "NetworkParams":
        """He-style initialization, deterministic per seed."""
        rng = np.random.default_rng(seed)
        dims = [cfg.input_dim] + [cfg.hidden] * (N_TRUNK_LAYERS - 1) + [cfg.output_dim]
        trunk_w = [
            rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
            for i in range(N_TRUNK_LAYERS)
        ]
        trunk_b = [np.zeros(dims[i + 1]) for i in range(N_TRUNK_LAYERS)]
        hd = [cfg.head_input_dim, cfg.head_hidden, RAW_HEAD_INPUTS]
        head_w = [
            rng.normal(0.0, np.sqrt(2.0 / hd[i]) * 0.1, size=(hd[i], hd[i + 1]))
            for i in range(2)
        ]
        head_b = [np.zeros(hd[i + 1]) for i in range(2)]
        return cls(trunk_w, trunk_b, head_w, head_b, cfg)

    @classmethod
    def zeros(cls, cfg: NetConfig) -> "NetworkParams":
        dims = [cfg.input_dim] + [cfg.hidden] * (N_TRUNK_LAYERS - 1) + [cfg.output_dim]
        hd = [cfg.head_input_dim, cfg.head_hidden, RAW_HEAD_INPUTS]
        return cls(
            [np.zeros((dims[i], dims[i + 1])) for i in range(N_TRUNK_LAYERS)],
            [np.zeros(dims[i + 1]) for i in range(N_TRUNK_LAYERS)],
            [np.zeros((hd[i], hd[i + 1])) for i in range(2)],
            [np.zeros(hd[i + 1]) for i in range(2)],
            cfg,
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [a.ravel() for a in self.trunk_w + self.trunk_b + self.head_w + self.head_b]
        )

    def arrays(self) -> list[np.ndarray]:
        return self.trunk_w + self.trunk_b + self.head_w + self.head_b

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.trunk_w],
            [b.copy() for b in self.trunk_b],
            [w.copy() for w in self.head_w],
            [b.copy() for b in self.head_b],
            self.cfg,
        )

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray], cfg: NetConfig) -> "NetworkParams":
        return cls(arrays[0:6], arrays[6:12], arrays[12:14], arrays[14:16], cfg)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class NetTrace:
    """Intermediates of one batched forward pass, kept for the backward."""

    encoded: np.ndarray
    pre_acts: list[np.ndarray]
    hiddens: list[np.ndarray]
    raw_out: np.ndarray
    head_in: np.ndarray
    head_pre: np.ndarray
    head_hidden: np.ndarray
    residual: np.ndarray
    refined: np.ndarray
    att_amp: np.ndarray
    att_phase: np.ndarray
    sig_amp: np.ndarray
    sig_phase: np.ndarray
    latent: np.ndarray
    spread: np.ndarray
    spread_gate: np.ndarray
    freq_modulation: bool


@dataclass
class NetGrads:
    trunk_w: list[np.ndarray]
    trunk_b: list[np.ndarray]
    head_w: list[np.ndarray]
    head_b: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "NetGrads":
        return cls(
            [np.zeros_like(w) for w in params.trunk_w],
            [np.zeros_like(b) for b in params.trunk_b],
            [np.zeros_like(w) for w in params.head_w],
            [np.zeros_like(b) for b in params.head_b],
        )

    def arrays(self) -> list[np.ndarray]:
        return self.trunk_w + self.trunk_b + self.head_w + self.head_b


def forward_encoded(
    params: NetworkParams, encoded: np.ndarray, freq_modulation: bool = True
) -> NetTrace:
    """Batched forward over pre-encoded inputs (N, input_dim)."""
    cfg = params.cfg
    encoded = np.atleast_2d(np.asarray(encoded, dtype=np.float64))
    if encoded.shape[1] != cfg.input_dim:
        raise ShapeMismatch(
            f"encoded dim {encoded.shape[1]} != input dim {cfg.input_dim}"
        )
    h = encoded
    pre_acts, hiddens = [], []
    for i in range(N_TRUNK_LAYERS - 1):
        a = h @ params.trunk_w[i] + params.trunk_b[i]
        h = np.maximum(a, 0.0)
        pre_acts.append(a)
        hiddens.append(h)
    raw = h @ params.trunk_w[-1] + params.trunk_b[-1]

    latent = raw[:, RAW_HEAD_INPUTS : RAW_HEAD_INPUTS + cfg.latent_dim]
    head_in = np.concatenate([raw[:, :RAW_HEAD_INPUTS], latent], axis=1)
    head_pre = head_in @ params.head_w[0] + params.head_b[0]
    head_hidden = np.maximum(head_pre, 0.0)
    residual = head_hidden @ params.head_w[1] + params.head_b[1]
    refined = raw[:, :RAW_HEAD_INPUTS] + residual

    att_amp = sigmoid(refined[:, 0])
    att_phase = refined[:, 1]
    sig_amp = softplus(refined[:, 2])
    sig_phase = refined[:, 3]
    spread_gate = sigmoid(raw[:, -1])
    if freq_modulation:
        spread = cfg.spread_min + (cfg.spread_max - cfg.spread_min) * spread_gate
    else:
        spread = np.ones_like(spread_gate)

    return NetTrace(
        encoded=encoded,
        pre_acts=pre_acts,
        hiddens=hiddens,
        raw_out=raw,
        head_in=head_in,
        head_pre=head_pre,
        head_hidden=head_hidden,
        residual=residual,
        refined=refined,
        att_amp=att_amp,
        att_phase=att_phase,
        sig_amp=sig_amp,
        sig_phase=sig_phase,
        latent=latent,
        spread=spread,
        spread_gate=spread_gate,
        freq_modulation=freq_modulation,
    )


def backward_encoded(
    params: NetworkParams,
    trace: NetTrace,
    adj_att_amp: np.ndarray,
    adj_att_phase: np.ndarray,
    adj_sig_amp: np.ndarray,
    adj_sig_phase: np.ndarray,
    adj_spread: np.ndarray,
    adj_latent: np.ndarray | None = None,
) -> tuple[NetGrads, np.ndarray]:
    """Exact adjoints of forward_encoded.

    Returns parameter gradients and the adjoint of the encoded input.
    """
    cfg = params.cfg
    n = trace.encoded.shape[0]

    adj_refined = np.empty((n, RAW_HEAD_INPUTS))
    adj_refined[:, 0] = adj_att_amp * trace.att_amp * (1.0 - trace.att_amp)
    adj_refined[:, 1] = adj_att_phase
    adj_refined[:, 2] = adj_sig_amp * sigmoid(trace.refined[:, 2])
    adj_refined[:, 3] = adj_sig_phase

    grads = NetGrads.zeros_like(params)

    # head backward: refined = raw[:, :4] + head(head_in)
    adj_head_hidden = adj_refined @ params.head_w[1].T
    grads.head_w[1] += trace.head_hidden.T @ adj_refined
    grads.head_b[1] += adj_refined.sum(axis=0)
    adj_head_pre = adj_head_hidden * (trace.head_pre > 0.0)
    adj_head_in = adj_head_pre @ params.head_w[0].T
    grads.head_w[0] += trace.head_in.T @ adj_head_pre
    grads.head_b[0] += adj_head_pre.sum(axis=0)

    adj_raw = np.zeros_like(trace.raw_out)
    adj_raw[:, :RAW_HEAD_INPUTS] = adj_refined + adj_head_in[:, :RAW_HEAD_INPUTS]
    adj_raw[:, RAW_HEAD_INPUTS : RAW_HEAD_INPUTS + cfg.latent_dim] = adj_head_in[
        :, RAW_HEAD_INPUTS:
    ]
    if adj_latent is not None:
        adj_raw[:, RAW_HEAD_INPUTS : RAW_HEAD_INPUTS + cfg.latent_dim] += adj_latent
    if trace.freq_modulation:
        adj_raw[:, -1] += (
            adj_spread
            * (cfg.spread_max - cfg.spread_min)
            * trace.spread_gate
            * (1.0 - trace.spread_gate)
        )

    # trunk backward
    adj_h = adj_raw
    grads.trunk_w[-1] += trace.hiddens[-1].T @ adj_raw
    grads.trunk_b[-1] += adj_raw.sum(axis=0)
    adj_h = adj_raw @ params.trunk_w[-1].T
    for i in range(N_TRUNK_LAYERS - 2, -1, -1):
        adj_a = adj_h * (trace.pre_acts[i] > 0.0)
        below = trace.encoded if i == 0 else trace.hiddens[i - 1]
        grads.trunk_w[i] += below.T @ adj_a
        grads.trunk_b[i] += adj_a.sum(axis=0)
        adj_h = adj_a @ params.trunk_w[i].T
    return grads, adj_h


def forward(params: NetworkParams, encoded: np.ndarray) -> RFAttributes:
    """Single-query forward: (attenuation, signal, latent, spread)."""
    t = forward_encoded(params, encoded)
    att = t.att_amp[0] * complex(np.cos(t.att_phase[0]), np.sin(t.att_phase[0]))
    sig = t.sig_amp[0] * complex(np.cos(t.sig_phase[0]), np.sin(t.sig_phase[0]))
    return RFAttributes(att, sig, t.latent[0].copy(), float(t.spread[0]))


def encode_batch(
    params: NetworkParams,
    tx: TxDescriptor,
    means: np.ndarray,
    bounds: Box,
    freq_modulation: bool = True,
    clamp_tx: bool = False,
) -> np.ndarray:
    """Encoded inputs for every Gaussian center (N, input_dim).

    TX position/frequency follow encode_inputs strictness; Gaussian centers
    are free parameters and are encoded wherever they currently sit.
    """
    cfg = params.cfg
    f_min, f_max = cfg.f_min, cfg.f_max
    f = tx.frequency
    if not (f_min <= f <= f_max):
        if not clamp_tx:
            raise FrequencyOutOfRange(
                f"{f:.4e} Hz outside trained range [{f_min:.4e}, {f_max:.4e}]"
            )
        f = min(max(f, f_min), f_max)
    p_tx = tx.position
    if not bounds.contains(p_tx) and clamp_tx:
        p_tx = np.clip(p_tx, bounds.lo, bounds.hi)

    n = means.shape[0]
    enc_tx = positional_encoding(normalize_positions(p_tx, bounds), cfg.pos_bands)
    enc_mu = positional_encoding(normalize_positions(means, bounds), cfg.pos_bands)
    if freq_modulation:
        f_norm = normalize_frequency(f, f_min, f_max)
        enc_f = positional_encoding(np.array([[f_norm]]), cfg.freq_bands)
    else:
        enc_f = np.zeros((1, 2 * cfg.freq_bands))
    return np.concatenate(
        [np.repeat(enc_tx, n, axis=0), enc_mu, np.repeat(enc_f, n, axis=0)], axis=1
    )


def forward_batch(
    params: NetworkParams,
    tx: TxDescriptor,
    scene,
    frequency: float | None = None,
    clamp_tx: bool = False,
) -> list[RFAttributes]:
    """Per-Gaussian attributes for a whole scene in one batched pass."""
    if frequency is not None:
        tx = TxDescriptor(tx.position, frequency)
    enc = encode_batch(params, tx, scene.means, scene.bounds, clamp_tx=clamp_tx)
    t = forward_encoded(params, enc)
    out = []
    for i in range(scene.n_gaussians):
        att = t.att_amp[i] * complex(np.cos(t.att_phase[i]), np.sin(t.att_phase[i]))
        sig = t.sig_amp[i] * complex(np.cos(t.sig_phase[i]), np.sin(t.sig_phase[i]))
        out.append(RFAttributes(att, sig, t.latent[i].copy(), float(t.spread[i])))
    return out


def mean_encoding_backward(
    cfg: NetConfig, means: np.ndarray, bounds: Box, adj_encoded: np.ndarray
) -> np.ndarray:
    """Adjoint of encode_batch w.r.t. the Gaussian centers only."""
    lo = 2 * cfg.pos_bands * 3
    hi = lo + 2 * cfg.pos_bands * 3
    u = normalize_positions(means, bounds)
    grad_u = positional_encoding_backward(u, cfg.pos_bands, adj_encoded[:, lo:hi])
    span = np.where(bounds.size > 0, bounds.size, 1.0)
    return grad_u * (2.0 / span)[None, :]
