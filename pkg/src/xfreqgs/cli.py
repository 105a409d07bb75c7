"""Command-line interface.

Subcommands: generate | train | render | eval | ablate | print-config.
Exit codes: 0 success, 2 validation error, 3 runtime error.

Thread count comes from --threads, then the XFREQ_THREADS environment
variable; --deterministic implies one thread unless --threads is explicit.
The BLAS pool size must be pinned before numpy loads, so all numeric imports
happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys

GHZ = 1e9


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xfreqgs",
        description=(
            "Cross-frequency radiation-field reconstruction: synthesize, train on,"
            " and evaluate receiver-side power angular spectrum maps."
        ),
    )
    parser.add_argument("--threads", type=int, default=None, help="worker thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a ground-truth dataset")
    p.add_argument("scene", help="scene YAML file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--grid", default="45x180", help="ELEVxAZIM cell counts")
    p.add_argument("--tx-count", type=int, default=60)
    p.add_argument(
        "--frequencies-ghz", default="1,10,24.25,37,94", help="comma-separated GHz list"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-scale", action="store_true", help="use a 90x360 grid")
    p.add_argument(
        "--write-default-scene",
        action="store_true",
        help="create the scene file with built-in defaults if it does not exist",
    )

    p = sub.add_parser("train", help="fit a model to a dataset")
    p.add_argument("manifest", help="dataset manifest path")
    p.add_argument("--config", default=None, help="config YAML (print-config shows defaults)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--resume", default=None, help="resume from this checkpoint")
    p.add_argument("--iterations", type=int, default=None, help="override config iterations")
    p.add_argument(
        "--stop-after",
        type=int,
        default=None,
        help="interrupt after this many iterations (schedule keeps the full horizon)",
    )
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--paper-scale", action="store_true", help="200k-iteration preset")
    p.add_argument("--log", default=None, help="metrics CSV path (default <out>.metrics.csv)")

    p = sub.add_parser("render", help="render one PAS from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("tx", nargs=3, type=float, metavar=("X", "Y", "Z"))
    p.add_argument("--freq-ghz", type=float, required=True)
    p.add_argument("--out", required=True, help="output PAS grid file")
    p.add_argument("--extrapolate", action="store_true", help="allow out-of-range frequency")
    p.add_argument("--export-csv", default=None, help="also dump the map as CSV")

    p = sub.add_parser("eval", help="train per split protocol and evaluate")
    p.add_argument("checkpoint", help="checkpoint supplying the model configuration")
    p.add_argument("manifest")
    p.add_argument(
        "split",
        help="random:<frac>:<seed> | lofo:<GHz> | sparse:<GHz,...>@<target GHz>",
    )
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument(
        "--use-checkpoint-model",
        action="store_true",
        help="skip retraining; evaluate the checkpoint's parameters on the test set",
    )

    p = sub.add_parser("ablate", help="run component-ablation variants")
    p.add_argument("manifest")
    p.add_argument("--config", default=None)
    p.add_argument("--variants", default="full,no_freq_modulation,no_aos")
    p.add_argument("--split", default="random:0.2:0", help="shared split spec")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("print-config", help="print the full default config")
    p.add_argument("--config", default=None, help="merge this file over the defaults")

    return parser


def _apply_threads(args) -> None:
    threads = args.threads
    if threads is None:
        env = os.environ.get("XFREQ_THREADS")
        if env:
            threads = int(env)
    if threads is None and getattr(args, "deterministic", False):
        threads = 1
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


# -- config handling ----------------------------------------------------------


def default_config() -> dict:
    from dataclasses import asdict

    from .network import NetConfig
    from .renderer import RenderOptions
    from .training import TrainConfig

    return {
        "train": asdict(TrainConfig()),
        "network": asdict(NetConfig()),
        "render": asdict(RenderOptions()),
        "scene_init": {"n_gaussians": 2048, "seed": 0, "initial_scale": None},
    }


def load_config(path: str | None) -> dict:
    import yaml

    from .errors import FileFormatError

    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise FileFormatError(f"config not found: {path}")
    except yaml.YAMLError as e:
        raise FileFormatError(f"{path}: invalid YAML: {e}")
    for section, values in doc.items():
        if section not in cfg:
            raise FileFormatError(f"{path}: unknown config section '{section}'")
        if not isinstance(values, dict):
            raise FileFormatError(f"{path}: section '{section}' must be a mapping")
        for key, val in values.items():
            if key not in cfg[section]:
                raise FileFormatError(f"{path}: unknown key '{section}.{key}'")
            cfg[section][key] = val
    return cfg


def _configs_from_dict(cfg: dict):
    from .network import NetConfig
    from .renderer import RenderOptions
    from .training import TrainConfig

    return (
        TrainConfig(**cfg["train"]),
        NetConfig(**cfg["network"]),
        RenderOptions(**cfg["render"]),
        cfg["scene_init"],
    )


def _parse_grid(text: str):
    from .core import AngularGrid
    from .errors import FileFormatError

    try:
        n_elev, n_azim = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise FileFormatError(f"bad grid spec '{text}', want like 45x180")
    return AngularGrid(n_elev, n_azim)


def parse_split_spec(spec: str, samples):
    from .errors import InvalidSplitSpec
    from . import experiments

    try:
        if spec.startswith("random:"):
            parts = spec.split(":")
            frac = float(parts[1])
            seed = int(parts[2]) if len(parts) > 2 else 0
            return experiments.random_split(samples, frac, seed)
        if spec.startswith("lofo:"):
            ghz = float(spec.split(":", 1)[1])
            return experiments.lofo_split(samples, ghz * GHZ)
        if spec.startswith("sparse:"):
            body = spec.split(":", 1)[1]
            freqs_text, target_text = body.split("@")
            freqs = [float(t) * GHZ for t in freqs_text.split(",")]
            return experiments.sparse_split(samples, freqs, float(target_text) * GHZ)
    except (ValueError, IndexError) as e:
        raise InvalidSplitSpec(f"cannot parse split spec '{spec}': {e}") from e
    raise InvalidSplitSpec(f"unknown split mode in '{spec}'")


# -- command handlers ----------------------------------------------------------


def cmd_generate(args) -> int:
    from pathlib import Path

    from . import storage

    scene_path = Path(args.scene)
    if args.write_default_scene and not scene_path.exists():
        storage.write_default_scene(scene_path)
        print(f"wrote default scene to {scene_path}")
    grid = _parse_grid("90x360" if args.paper_scale else args.grid)
    freqs = [float(t) * GHZ for t in args.frequencies_ghz.split(",")]
    manifest_path = storage.generate_dataset(
        scene_path, args.out, grid, args.tx_count, freqs, args.seed
    )
    print(f"dataset manifest: {manifest_path}")
    print(f"samples: {args.tx_count * len(freqs)}")
    return 0


def _open_log(path, resume: bool):
    import csv

    from .training import LOG_COLUMNS

    exists = os.path.exists(path)
    fh = open(path, "a" if resume else "w", newline="")
    writer = csv.writer(fh)
    if not resume or not exists:
        writer.writerow(LOG_COLUMNS)
    return fh, writer


def cmd_train(args) -> int:
    from . import storage
    from .scene import init_scene
    from .network import NetworkParams
    from .training import OptimizerState, TrainConfig, train

    manifest, samples = storage.load_dataset(args.manifest)
    cfg = load_config(args.config)
    train_cfg, net_cfg, options, scene_init = _configs_from_dict(cfg)
    if args.paper_scale:
        train_cfg.iterations = 200_000
    if args.iterations is not None:
        train_cfg.iterations = args.iterations
    if args.deterministic:
        train_cfg.deterministic = True
        from dataclasses import replace

        options = replace(options, deterministic=True)

    start_iteration = 0
    opt_state = None
    rng_state = None
    if args.resume:
        ckpt = storage.load_checkpoint(args.resume)
        scene = ckpt.scene
        params = ckpt.params
        opt_state = ckpt.opt_state
        rng_state = ckpt.rng_state
        start_iteration = ckpt.iteration
        train_cfg = TrainConfig(**{**ckpt.config["train"], "iterations": train_cfg.iterations})
    else:
        scene = init_scene(
            scene_init["n_gaussians"],
            manifest.room,
            scene_init["seed"],
            scene_init.get("initial_scale"),
        )
        params = NetworkParams.init(net_cfg, scene_init["seed"])

    log_path = args.log or f"{args.out}.metrics.csv"
    fh, writer = _open_log(log_path, resume=bool(args.resume))

    ckpt_config = storage.make_checkpoint_config(
        train_cfg, params.cfg, options, scene_init
    )

    def save(iteration, result):
        storage.save_checkpoint(
            args.out,
            storage.Checkpoint(
                config=ckpt_config,
                scene=result.scene,
                params=result.params,
                opt_state=result.opt_state,
                iteration=iteration,
                rng_state=result.rng_state,
                grid=manifest.grid,
                rx=manifest.rx,
            ),
        )

    try:
        result = train(
            samples,
            scene,
            params,
            train_cfg,
            manifest.rx,
            options=options,
            opt_state=opt_state,
            rng_state=rng_state,
            start_iteration=start_iteration,
            stop_iteration=args.stop_after,
            log_fn=lambda row: writer.writerow(
                [row[0]] + [f"{x:.12g}" for x in row[1:]]
            ),
            checkpoint_fn=save,
        )
    finally:
        fh.close()
    print(f"checkpoint: {args.out}")
    print(f"metrics log: {log_path}")
    if result.log_rows:
        last = result.log_rows[-1]
        print(f"final loss {last[1]:.6f}, psnr {last[4]:.2f} dB")
    return 0


def cmd_render(args) -> int:
    import numpy as np

    from . import storage
    from .core import TxDescriptor
    from .errors import FrequencyOutOfRange
    from .renderer import render

    ckpt = storage.load_checkpoint(args.checkpoint)
    freq = args.freq_ghz * GHZ
    cfg = ckpt.params.cfg
    if not (cfg.f_min <= freq <= cfg.f_max) and not args.extrapolate:
        raise FrequencyOutOfRange(
            f"{args.freq_ghz} GHz outside trained range "
            f"[{cfg.f_min / GHZ:g}, {cfg.f_max / GHZ:g}] GHz (use --extrapolate)"
        )
    tx = TxDescriptor(np.array(args.tx), freq)
    from dataclasses import replace

    options = replace(ckpt.render_options, clamp_tx=args.extrapolate)
    pas, _ = render(ckpt.scene, ckpt.params, tx, ckpt.rx, ckpt.grid, options)
    storage.write_pas_file(args.out, pas, tx)
    if args.export_csv:
        storage.export_pas_csv(args.export_csv, pas)
    m, n = pas.argmax_cell()
    alpha, beta = pas.grid.cell_center(m, n)
    print(f"wrote {args.out}")
    print(f"max-power cell: azimuth {alpha:.3f} deg, elevation {beta:.3f} deg")
    return 0


def _write_report(report, out_dir, stem: str) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / f"{stem}_per_sample.csv")
    report.write_cdf_csv(out / f"{stem}_cdf_ssim.csv", "ssim")
    report.write_cdf_csv(out / f"{stem}_cdf_psnr.csv", "psnr")
    (out / f"{stem}_summary.txt").write_text(report.summary_text())


def cmd_eval(args) -> int:
    from . import experiments, storage

    ckpt = storage.load_checkpoint(args.checkpoint)
    manifest, samples = storage.load_dataset(args.manifest)
    plan = parse_split_spec(args.split, samples)
    experiments.assert_no_leakage(plan, samples)

    if args.use_checkpoint_model:
        by_id = {s.id: s for s in samples}
        test_samples = [by_id[i] for i in plan.test_ids]
        report = experiments.evaluate_model(
            ckpt.scene, ckpt.params, test_samples, manifest.rx, ckpt.render_options
        )
        report.conventions["split_mode"] = plan.mode
    else:
        scene_init = ckpt.config.get("scene_init", {})
        cfg = experiments.ExperimentConfig(
            n_gaussians=ckpt.scene.n_gaussians,
            scene_seed=scene_init.get("seed", ckpt.config["train"]["seed"]),
            net_seed=scene_init.get("seed", ckpt.config["train"]["seed"]),
            initial_scale=scene_init.get("initial_scale"),
            train=ckpt.train_config,
            net=ckpt.params.cfg,
            options=ckpt.render_options,
        )
        report = experiments.run_split(manifest, samples, plan, cfg)

    _write_report(report, args.out, "eval")
    agg = report.aggregates()
    print(f"train/test sizes: {len(plan.train_ids)}/{len(plan.test_ids)}")
    if plan.mode in ("lofo", "sparse"):
        print(f"held-out frequency: {plan.holdout_hz / GHZ:g} GHz (absent from training)")
    print(f"median ssim: {agg['ssim_median']:.4f}  mean ssim: {agg['ssim_mean']:.4f}")
    print(f"90%-CDF ssim level: {agg['ssim_cdf90']:.4f}")
    print(f"report directory: {args.out}")
    return 0


def cmd_ablate(args) -> int:
    from pathlib import Path

    from . import experiments, storage

    manifest, samples = storage.load_dataset(args.manifest)
    cfg_dict = load_config(args.config)
    train_cfg, net_cfg, options, scene_init = _configs_from_dict(cfg_dict)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in experiments.ABLATION_VARIANTS:
            from .errors import UnknownVariant

            raise UnknownVariant(f"unknown variant '{v}'")
    plan = parse_split_spec(args.split, samples)
    base_cfg = experiments.ExperimentConfig(
        n_gaussians=scene_init["n_gaussians"],
        scene_seed=scene_init["seed"],
        net_seed=scene_init["seed"],
        initial_scale=scene_init.get("initial_scale"),
        train=train_cfg,
        net=net_cfg,
        options=options,
    )
    # fairness guard: every variant shares the seed and the split
    shared = (base_cfg.scene_seed, base_cfg.net_seed, train_cfg.seed, plan.train_ids)

    results = {}
    for variant in variants:
        assert (
            base_cfg.scene_seed,
            base_cfg.net_seed,
            train_cfg.seed,
            plan.train_ids,
        ) == shared
        report = experiments.ablate(manifest, samples, plan, base_cfg, variant)
        _write_report(report, Path(args.out) / variant, variant)
        results[variant] = report.aggregates()

    lines = ["variant,ssim_mean,ssim_median,psnr_mean,psnr_median"]
    for variant, agg in results.items():
        lines.append(
            f"{variant},{agg['ssim_mean']:.6f},{agg['ssim_median']:.6f},"
            f"{agg['psnr_mean']:.4f},{agg['psnr_median']:.4f}"
        )
    if "full" in results:
        for variant in results:
            if variant == "full":
                continue
            ok = results["full"]["ssim_mean"] >= results[variant]["ssim_mean"]
            lines.append(f"# ordering full >= {variant} (mean ssim): {ok}")
    combined = Path(args.out) / "combined_summary.csv"
    combined.parent.mkdir(parents=True, exist_ok=True)
    combined.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_print_config(args) -> int:
    import yaml

    print(yaml.safe_dump(load_config(args.config), sort_keys=True), end="")
    return 0


_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "print-config": cmd_print_config,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _apply_threads(args)

    from .errors import EngineError, ValidationError, XfreqgsError

    try:
        return _HANDLERS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except XfreqgsError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
