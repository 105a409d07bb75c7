"""Evaluation harnesses: split protocols, train/eval runs, ablations.

Split modes:
  random  — seeded sample-level split, test fraction of all (TX, f) pairs
  lofo    — every sample at one held-out frequency goes to the test set
  sparse  — train on a sparse frequency subset, test at an in-range target

Every harness run asserts there is no train/test leakage before training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import ReceiverConfig
from .errors import InvalidSplit, UnknownVariant
from .metrics import PSNR_CAP_DB, cdf, median, psnr_values, quantile_nearest_rank, ssim_values
from .network import NetConfig, NetworkParams
from .renderer import RenderOptions, render
from .scene import init_scene
from .storage import DatasetManifest, Sample
from .training import TrainConfig, train

FREQ_TOL = 1e-6  # relative tolerance when matching sample frequencies


@dataclass(frozen=True)
class SplitPlan:
    mode: str  # random | lofo | sparse
    train_ids: tuple
    test_ids: tuple
    seed: int = 0
    holdout_hz: float | None = None  # lofo / sparse target
    train_freqs_hz: tuple | None = None  # sparse only

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise InvalidSplit("train and test sets overlap")
        if not self.test_ids:
            raise InvalidSplit("empty test set")
        if not self.train_ids:
            raise InvalidSplit("empty train set")


def _freq_match(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=FREQ_TOL)


def random_split(samples: list[Sample], test_fraction: float, seed: int) -> SplitPlan:
    if not (0.0 < test_fraction < 1.0):
        raise InvalidSplit("test fraction must lie strictly inside (0, 1)")
    ids = [s.id for s in samples]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_test = max(1, int(round(test_fraction * len(ids))))
    test = {ids[i] for i in order[:n_test]}
    return SplitPlan(
        mode="random",
        train_ids=tuple(i for i in ids if i not in test),
        test_ids=tuple(i for i in ids if i in test),
        seed=seed,
    )


def lofo_split(samples: list[Sample], holdout_hz: float, seed: int = 0) -> SplitPlan:
    test = [s.id for s in samples if _freq_match(s.tx.frequency, holdout_hz)]
    train = [s.id for s in samples if not _freq_match(s.tx.frequency, holdout_hz)]
    if not test:
        raise InvalidSplit(f"no samples at held-out frequency {holdout_hz:.4e} Hz")
    return SplitPlan(
        mode="lofo",
        train_ids=tuple(train),
        test_ids=tuple(test),
        seed=seed,
        holdout_hz=holdout_hz,
    )


def sparse_split(
    samples: list[Sample],
    train_freqs_hz: list[float],
    target_hz: float,
    seed: int = 0,
) -> SplitPlan:
    for f in train_freqs_hz:
        if _freq_match(f, target_hz):
            raise InvalidSplit("target frequency must be absent from training")
    if not (min(train_freqs_hz) < target_hz < max(train_freqs_hz)):
        raise InvalidSplit("target frequency must lie strictly inside the train range")
    train = [
        s.id
        for s in samples
        if any(_freq_match(s.tx.frequency, f) for f in train_freqs_hz)
    ]
    test = [s.id for s in samples if _freq_match(s.tx.frequency, target_hz)]
    if not test:
        raise InvalidSplit(f"no samples at target frequency {target_hz:.4e} Hz")
    if not train:
        raise InvalidSplit("no samples at any training frequency")
    return SplitPlan(
        mode="sparse",
        train_ids=tuple(train),
        test_ids=tuple(test),
        seed=seed,
        holdout_hz=target_hz,
        train_freqs_hz=tuple(train_freqs_hz),
    )


def assert_no_leakage(plan: SplitPlan, samples: list[Sample]) -> None:
    by_id = {s.id: s for s in samples}
    if set(plan.train_ids) & set(plan.test_ids):
        raise InvalidSplit("train and test sets overlap")
    if plan.mode in ("lofo", "sparse") and plan.holdout_hz is not None:
        leaked = [
            i
            for i in plan.train_ids
            if _freq_match(by_id[i].tx.frequency, plan.holdout_hz)
        ]
        if leaked:
            raise InvalidSplit(f"held-out frequency leaked into training: {leaked[:3]}")
    if plan.mode == "sparse" and plan.train_freqs_hz:
        for i in plan.train_ids:
            if not any(
                _freq_match(by_id[i].tx.frequency, f) for f in plan.train_freqs_hz
            ):
                raise InvalidSplit(f"train sample {i} outside sparse frequency set")


@dataclass
class EvalReport:
    """Per-sample metrics plus aggregates and CDF tables."""

    rows: list  # (sample id, frequency_hz, ssim, psnr)
    conventions: dict = field(default_factory=dict)

    @property
    def ssim_list(self) -> list[float]:
        return [r[2] for r in self.rows]

    @property
    def psnr_list(self) -> list[float]:
        return [r[3] for r in self.rows]

    def aggregates(self) -> dict:
        s, p = self.ssim_list, self.psnr_list
        return {
            "n_samples": len(self.rows),
            "ssim_mean": float(np.mean(s)),
            "ssim_median": median(s),
            "psnr_mean": float(np.mean(p)),
            "psnr_median": median(p),
            "ssim_cdf90": quantile_nearest_rank(s, 0.9),
            "psnr_cdf90": quantile_nearest_rank(p, 0.9),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "frequency_hz", "ssim", "psnr_db"])
            for row in self.rows:
                writer.writerow([row[0], f"{row[1]:.9g}", f"{row[2]:.12g}", f"{row[3]:.12g}"])

    def write_cdf_csv(self, path, metric: str = "ssim") -> None:
        values = self.ssim_list if metric == "ssim" else self.psnr_list
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([metric, "fraction"])
            for thr, frac in cdf(values):
                writer.writerow([f"{thr:.12g}", f"{frac:.6g}"])

    def summary_text(self) -> str:
        agg = self.aggregates()
        lines = ["# evaluation summary"]
        for key, val in sorted(self.conventions.items()):
            lines.append(f"# convention {key}: {val}")
        lines.append(f"# psnr cap at zero MSE: {PSNR_CAP_DB} dB")
        for key in sorted(agg):
            val = agg[key]
            lines.append(f"{key}: {val:.6f}" if isinstance(val, float) else f"{key}: {val}")
        lines.append(f"ssim_90pct_cdf_level: {agg['ssim_cdf90']:.6f}")
        return "\n".join(lines) + "\n"


DEFAULT_CONVENTIONS = {
    "ssim_window": "gaussian 11x11 sigma 1.5, C1=(0.01)^2 C2=(0.03)^2, L=1",
    "ssim_padding": "azimuth wrap, elevation reflect",
    "psnr_range": "L=1 on max-normalized maps",
    "median": "nearest-rank order statistic",
}


@dataclass
class ExperimentConfig:
    """Everything one train+eval run needs besides the dataset itself."""

    n_gaussians: int = 2048
    scene_seed: int = 0
    net_seed: int = 0
    initial_scale: float | None = 0.3  # None: coverage heuristic
    train: TrainConfig = field(default_factory=TrainConfig)
    net: NetConfig = field(default_factory=NetConfig)
    options: RenderOptions = field(default_factory=RenderOptions)


def evaluate_model(
    scene, params, samples: list[Sample], rx: ReceiverConfig, options: RenderOptions
) -> EvalReport:
    rows = []
    for s in sorted(samples, key=lambda x: x.id):
        pas, _ = render(scene, params, s.tx, rx, s.gt.grid, options)
        rows.append(
            (
                s.id,
                s.tx.frequency,
                ssim_values(pas.values, s.gt.values),
                psnr_values(pas.values, s.gt.values),
            )
        )
    return EvalReport(rows=rows, conventions=dict(DEFAULT_CONVENTIONS))


def run_split(
    manifest: DatasetManifest,
    samples: list[Sample],
    plan: SplitPlan,
    cfg: ExperimentConfig,
    log_fn=None,
) -> EvalReport:
    """Train on the plan's train set, evaluate on its test set."""
    assert_no_leakage(plan, samples)
    by_id = {s.id: s for s in samples}
    train_samples = [by_id[i] for i in plan.train_ids]
    test_samples = [by_id[i] for i in plan.test_ids]

    scene = init_scene(
        cfg.n_gaussians, manifest.room, cfg.scene_seed, cfg.initial_scale
    )
    params = NetworkParams.init(cfg.net, cfg.net_seed)
    result = train(
        train_samples,
        scene,
        params,
        cfg.train,
        manifest.rx,
        options=cfg.options,
        log_fn=log_fn,
    )
    report = evaluate_model(
        result.scene, result.params, test_samples, manifest.rx, cfg.options
    )
    report.conventions["split_mode"] = plan.mode
    report.conventions["train_size"] = len(train_samples)
    report.conventions["test_size"] = len(test_samples)
    return report


ABLATION_VARIANTS = ("baseline", "no_freq_modulation", "no_aos", "full")


def variant_options(base: RenderOptions, variant: str) -> RenderOptions:
    """Render options for one ablation variant."""
    if variant == "full":
        return replace(base, freq_modulation=True, adaptive_footprint=True)
    if variant == "no_freq_modulation":
        return replace(base, freq_modulation=False, adaptive_footprint=True)
    if variant == "no_aos":
        return replace(base, freq_modulation=True, adaptive_footprint=False)
    if variant == "baseline":
        return replace(base, freq_modulation=False, adaptive_footprint=False)
    raise UnknownVariant(f"unknown ablation variant: {variant}")


def ablate(
    manifest: DatasetManifest,
    samples: list[Sample],
    plan: SplitPlan,
    cfg: ExperimentConfig,
    variant: str,
    log_fn=None,
) -> EvalReport:
    """One ablation run; seeds and split are shared across variants."""
    options = variant_options(cfg.options, variant)
    var_cfg = replace(cfg, options=options)
    report = run_split(manifest, samples, plan, var_cfg, log_fn=log_fn)
    report.conventions["variant"] = variant
    return report
