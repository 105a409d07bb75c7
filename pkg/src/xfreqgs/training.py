"""End-to-end optimization of scene geometry and network parameters.

One step renders a ground-truth-supervised PAS, runs the exact reverse-mode
sweep recorded by the renderer, and applies a per-group adaptive-moment
update (network / means / log-scales / quaternions), followed by quaternion
renormalization and scale clamping.  Loss and gradient reductions stay in
64-bit throughout so finite-difference verification is meaningful.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import AngularGrid, PASMap, ReceiverConfig
from .errors import EmptyDataset, GridMismatch, ShapeMismatch
from .metrics import psnr_values, ssim_value_and_grad
from .network import NetGrads, NetworkParams
from .renderer import RenderGraph, RenderGrads, RenderOptions, render, render_backward
from .scene import GaussianScene

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    iterations: int = 10_000
    lr_network: float = 1e-3
    lr_means: float = 1.6e-4
    lr_logscales: float = 5e-3
    lr_quats: float = 1e-3
    ssim_weight: float = 0.2
    batch: int = 1
    seed: int = 0
    deterministic: bool = True
    log_interval: int = 100
    checkpoint_interval: int = 0  # 0: only at the end
    lr_decay_at: float = 0.8  # fraction of iterations after which ...
    lr_decay_factor: float = 0.1  # ... the network rate is multiplied by this

    def __post_init__(self):
        if not (0.0 <= self.ssim_weight <= 1.0):
            raise ShapeMismatch("ssim_weight must lie in [0, 1]")
        for name in ("lr_network", "lr_means", "lr_logscales", "lr_quats"):
            if getattr(self, name) <= 0:
                raise ShapeMismatch(f"{name} must be positive")


def loss(pred: PASMap, gt: PASMap, ssim_weight: float) -> float:
    """(1 - w) * mean_abs_error + w * (1 - SSIM)."""
    if pred.grid != gt.grid:
        raise GridMismatch("prediction and ground truth grids differ")
    return loss_and_grad(pred.values, gt.values, ssim_weight)[0]


def loss_and_grad(
    pred: np.ndarray, gt: np.ndarray, ssim_weight: float
) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient with respect to the prediction."""
    if pred.shape != gt.shape:
        raise GridMismatch("prediction and ground truth shapes differ")
    diff = pred - gt
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - ssim_weight) * np.sign(diff) / diff.size
    value = (1.0 - ssim_weight) * l1
    if ssim_weight > 0.0:
        s, s_grad = ssim_value_and_grad(pred, gt)
        value += ssim_weight * (1.0 - s)
        grad = grad - ssim_weight * s_grad
    return value, grad


def backward(graph: RenderGraph, loss_adjoint: np.ndarray) -> RenderGrads:
    """Exact adjoints of the recorded render under the given loss adjoint."""
    return render_backward(graph, loss_adjoint)


@dataclass
class OptimizerState:
    """Adaptive-moment accumulators, ordered: means, quats, log-scales, net."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def init(cls, scene: GaussianScene, params: NetworkParams) -> "OptimizerState":
        tensors = _parameter_tensors(scene, params)
        return cls(
            m=[np.zeros_like(t) for t in tensors],
            v=[np.zeros_like(t) for t in tensors],
        )


def _parameter_tensors(scene: GaussianScene, params: NetworkParams) -> list[np.ndarray]:
    return [scene.means, scene.quaternions, scene.log_scales] + params.arrays()


def _gradient_tensors(grads: RenderGrads) -> list[np.ndarray]:
    return [grads.means, grads.quaternions, grads.log_scales] + grads.net.arrays()


def adam_update(
    tensor: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """In-place adaptive-moment update; t is the 1-based step count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    tensor -= lr * m_hat / (np.sqrt(v_hat) + eps)


def step(
    scene: GaussianScene,
    params: NetworkParams,
    grads: RenderGrads,
    state: OptimizerState,
    config: TrainConfig,
) -> None:
    """One optimizer step over all parameter groups, then re-projection."""
    tensors = _parameter_tensors(scene, params)
    gtensors = _gradient_tensors(grads)
    if len(tensors) != len(state.m):
        raise ShapeMismatch("optimizer state does not match the parameters")
    state.step_count += 1
    t = state.step_count
    lr_net = config.lr_network
    if config.iterations > 0 and t > config.lr_decay_at * config.iterations:
        lr_net *= config.lr_decay_factor
    rates = [config.lr_means, config.lr_quats, config.lr_logscales]
    rates += [lr_net] * (len(tensors) - 3)
    for tensor, grad, m, v, lr in zip(tensors, gtensors, state.m, state.v, rates):
        if tensor.shape != grad.shape:
            raise ShapeMismatch(f"gradient shape {grad.shape} != {tensor.shape}")
        adam_update(tensor, grad, m, v, t, lr)
    scene.normalize_quaternions()
    scene.clamp_scales()


@dataclass
class TrainResult:
    scene: GaussianScene
    params: NetworkParams
    opt_state: OptimizerState
    log_rows: list
    rng_state: dict


LOG_COLUMNS = ("iteration", "loss", "l1", "ssim_term", "psnr", "wall_ms")


def train(
    dataset,
    scene: GaussianScene,
    params: NetworkParams,
    config: TrainConfig,
    rx: ReceiverConfig,
    options: RenderOptions | None = None,
    opt_state: OptimizerState | None = None,
    rng_state: dict | None = None,
    start_iteration: int = 0,
    stop_iteration: int | None = None,
    log_fn=None,
    checkpoint_fn=None,
) -> TrainResult:
    """Optimize against a dataset of (tx, ground-truth PAS) samples.

    Samples are drawn uniformly with replacement from the dataset with a
    seeded generator.  Deterministic mode zeroes the wall-clock log column so
    metrics logs replay identically.  checkpoint_fn(iteration, result) runs
    every checkpoint_interval iterations and once at the end.  stop_iteration
    interrupts the run early without changing the configured horizon (the
    learning-rate schedule follows config.iterations either way), so a
    resumed run reproduces an uninterrupted one exactly.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDataset("training needs at least one sample")
    options = options or RenderOptions(deterministic=config.deterministic)
    grid = samples[0].gt.grid
    for s in samples:
        if s.gt.grid != grid:
            raise GridMismatch("all samples must share one grid")

    rng = np.random.default_rng(config.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if opt_state is None:
        opt_state = OptimizerState.init(scene, params)

    log_rows: list = []

    def emit_checkpoint(iteration: int) -> None:
        if checkpoint_fn is not None:
            checkpoint_fn(
                iteration,
                TrainResult(scene, params, opt_state, log_rows, rng.bit_generator.state),
            )

    end = config.iterations
    if stop_iteration is not None:
        end = min(end, stop_iteration)
    for it in range(start_iteration, end):
        t0 = time.perf_counter()
        idx = rng.integers(0, len(samples), size=config.batch)
        batch_value = 0.0
        batch_l1 = 0.0
        batch_ssim_term = 0.0
        batch_psnr = 0.0
        total: RenderGrads | None = None
        for j in idx:
            sample = samples[int(j)]
            pas, graph = render(scene, params, sample.tx, rx, grid, options)
            value, grad_map = loss_and_grad(
                pas.values, sample.gt.values, config.ssim_weight
            )
            grads = render_backward(graph, grad_map / config.batch)
            total = grads if total is None else _accumulate_grads(total, grads)
            batch_value += value / config.batch
            diff = pas.values - sample.gt.values
            batch_l1 += float(np.mean(np.abs(diff))) / config.batch
            if config.ssim_weight > 0.0:
                batch_ssim_term += (
                    value - (1.0 - config.ssim_weight) * float(np.mean(np.abs(diff)))
                ) / config.batch
            batch_psnr += psnr_values(pas.values, sample.gt.values) / config.batch
        step(scene, params, total, opt_state, config)

        if config.log_interval > 0 and (
            (it + 1) % config.log_interval == 0 or it + 1 == end
        ):
            wall_ms = 0.0 if config.deterministic else (time.perf_counter() - t0) * 1e3
            row = (it + 1, batch_value, batch_l1, batch_ssim_term, batch_psnr, wall_ms)
            log_rows.append(row)
            if log_fn is not None:
                log_fn(row)
        if (
            config.checkpoint_interval > 0
            and (it + 1) % config.checkpoint_interval == 0
            and it + 1 < end
        ):
            emit_checkpoint(it + 1)

    emit_checkpoint(end)
    return TrainResult(scene, params, opt_state, log_rows, rng.bit_generator.state)


def _accumulate_grads(total: RenderGrads, extra: RenderGrads) -> RenderGrads:
    total.means += extra.means
    total.quaternions += extra.quaternions
    total.log_scales += extra.log_scales
    for a, b in zip(total.net.arrays(), extra.net.arrays()):
        a += b
    return total
