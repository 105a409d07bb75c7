#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-Python fallback.

Times the three hot stages of one render/backward cycle (contributor-pair
search, ordered complex accumulation, accumulation backward) on a synthetic
workload, then times a full train step through the public API under each
backend.  Both backends are bit-identical; this only measures speed.

Usage: python benchmarks/bench_kernels.py [--n-gaussians N] [--grid 45x180]
"""

import argparse
import os
import time

import numpy as np


def build_workload(n, n_elev, n_azim, seed=0):
    rng = np.random.default_rng(seed)
    u_alpha = rng.uniform(0, 360, n)
    u_beta = rng.uniform(2, 80, n)
    sa = rng.uniform(0.5, 12, n)
    sc = rng.uniform(0.5, 12, n)
    sb = rng.uniform(-0.3, 0.3, n) * np.sqrt(sa * sc)
    det = sa * sc - sb * sb
    conic = np.stack([sc / det, -sb / det, sa / det], axis=1)
    return dict(
        order=rng.permutation(n).astype(np.int64),
        u_alpha=u_alpha,
        u_beta=u_beta,
        conic_a=np.ascontiguousarray(conic[:, 0]),
        conic_b=np.ascontiguousarray(conic[:, 1]),
        conic_c=np.ascontiguousarray(conic[:, 2]),
        bb_da=3 * np.sqrt(sa),
        bb_db=3 * np.sqrt(sc),
        pole=np.zeros(n, dtype=np.uint8),
        active=np.ones(n, dtype=np.uint8),
        s_re=rng.normal(size=n),
        s_im=rng.normal(size=n),
        d_re=rng.uniform(-0.9, 0.9, n),
        d_im=rng.uniform(-0.9, 0.9, n),
        n_elev=n_elev,
        n_azim=n_azim,
    )


def run_stages(impl, wl, repeats=3):
    n_cells = wl["n_elev"] * wl["n_azim"]
    n = wl["s_re"].size
    times = {}

    def clock(label, fn):
        best = float("inf")
        out = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
        times[label] = best
        return out

    pairs = clock(
        "find_pairs",
        lambda: impl.find_pairs(
            wl["order"], wl["u_alpha"], wl["u_beta"], wl["conic_a"], wl["conic_b"],
            wl["conic_c"], wl["bb_da"], wl["bb_db"], wl["pole"], wl["active"],
            wl["n_elev"], wl["n_azim"], 90.0 / wl["n_elev"], 360.0 / wl["n_azim"], 9.0,
        ),
    )
    grouped = clock(
        "group_by_cell",
        lambda: impl.group_by_cell(pairs[1], n_cells, pairs[0], pairs[2], pairs[3], pairs[4]),
    )
    seg, pg = grouped[0], grouped[1]
    w = np.exp(-0.5 * grouped[5])
    fwd = clock(
        "accumulate_fwd",
        lambda: impl.accumulate_forward(seg, pg, w, wl["s_re"], wl["s_im"], wl["d_re"], wl["d_im"]),
    )
    adj = np.ones(n_cells)
    bwd = clock(
        "accumulate_bwd",
        lambda: impl.accumulate_backward(
            seg, pg, w, wl["s_re"], wl["s_im"], wl["d_re"], wl["d_im"],
            fwd[2], fwd[3], adj, adj, n,
        ),
    )
    clock(
        "weight_bwd",
        lambda: impl.weight_backward(
            pg, grouped[3], grouped[4], w, bwd[0], wl["conic_a"], wl["conic_b"],
            wl["conic_c"], wl["pole"], n,
        ),
    )
    return pairs[0].size, times


def bench_full_step(n_gaussians, grid_shape, force_python):
    """Full render + backward through the public API in a fresh process env."""
    env_flag = os.environ.get("XFREQ_FORCE_PY_KERNELS")
    if force_python:
        os.environ["XFREQ_FORCE_PY_KERNELS"] = "1"
    # import inside so the backend choice respects the env var
    import importlib

    import xfreqgs._kernels as kern

    importlib.reload(kern)
    import xfreqgs.renderer as renderer

    importlib.reload(renderer)
    from xfreqgs.core import AngularGrid, Box, ReceiverConfig, TxDescriptor
    from xfreqgs.network import NetConfig, NetworkParams
    from xfreqgs.scene import init_scene
    from xfreqgs.training import loss_and_grad

    bounds = Box(np.array([0, 0, 0.0]), np.array([6, 4, 3.0]))
    scene = init_scene(n_gaussians, bounds, seed=1, initial_scale=0.3)
    params = NetworkParams.init(NetConfig(), seed=2)
    rx = ReceiverConfig(np.array([3, 2, 1.0]))
    tx = TxDescriptor(np.array([4, 3, 2.0]), 10e9)
    grid = AngularGrid(*grid_shape)

    pas, graph = renderer.render(scene, params, tx, rx, grid)
    gt = np.clip(pas.values * 0.9 + 0.01, 0, 1)
    t0 = time.perf_counter()
    reps = 1 if force_python else 3
    for _ in range(reps):
        pas, graph = renderer.render(scene, params, tx, rx, grid)
        _, gmap = loss_and_grad(pas.values, gt, 0.2)
        renderer.render_backward(graph, gmap)
    dt = (time.perf_counter() - t0) / reps

    if env_flag is None:
        os.environ.pop("XFREQ_FORCE_PY_KERNELS", None)
    else:
        os.environ["XFREQ_FORCE_PY_KERNELS"] = env_flag
    importlib.reload(kern)
    importlib.reload(renderer)
    return dt, graph.pair_gauss.size, kern.BACKEND_NAME


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-gaussians", type=int, default=2048)
    ap.add_argument("--grid", default="45x180")
    args = ap.parse_args()
    n_elev, n_azim = (int(t) for t in args.grid.lower().split("x"))

    from xfreqgs._kernels import available_backends

    backends = available_backends()
    wl = build_workload(args.n_gaussians, n_elev, n_azim)

    print(f"workload: {args.n_gaussians} Gaussians on a {n_elev}x{n_azim} grid")
    results = {}
    for name, impl in backends.items():
        n_pairs, times = run_stages(impl, wl)
        results[name] = times
        total = sum(times.values())
        print(f"\nbackend '{name}' ({n_pairs} contributor pairs):")
        for label, t in times.items():
            print(f"  {label:16s} {t * 1e3:9.2f} ms")
        print(f"  {'stage total':16s} {total * 1e3:9.2f} ms")
    if len(results) == 2:
        print("\nspeedup (python / compiled):")
        for label in results["compiled"]:
            ratio = results["python"][label] / results["compiled"][label]
            print(f"  {label:16s} {ratio:8.1f}x")

    print("\nfull train step through the public API:")
    for force_python in (False, True):
        if force_python and "compiled" not in backends:
            continue
        dt, n_pairs, backend = bench_full_step(
            args.n_gaussians, (n_elev, n_azim), force_python
        )
        print(f"  backend '{backend}': {dt * 1e3:9.1f} ms per render+backward")


if __name__ == "__main__":
    main()
