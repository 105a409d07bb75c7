import math
from dataclasses import replace

import numpy as np
import pytest

from xfreqgs.core import AngularGrid, Box, ReceiverConfig, TxDescriptor
from xfreqgs.errors import AllZeroMap, GaussianAtReceiver, MisalignedAttributes
from xfreqgs.network import NetworkParams
from xfreqgs.renderer import (
    ProjectedGaussian,
    RenderOptions,
    accumulate,
    bin_contributors,
    chart_jacobian,
    frequency_footprint,
    project,
    project_scene,
    projected_covariance,
    render,
)
from xfreqgs.scene import (
    GaussianGeometry,
    GaussianScene,
    RFAttributes,
    init_scene,
    quaternion_multiply,
    rotation_quaternion_about_z,
)

from conftest import MICRO_NET, micro_setup

RX = ReceiverConfig(np.array([0.0, 0.0, 0.0]))
IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def iso_geom(pos, scale=0.1):
    return GaussianGeometry(np.asarray(pos, float), IDENTITY_Q, np.log([scale] * 3))


# -- projection ----------------------------------------------------------------


def test_project_convention_anchor():
    d_hat, uv = project(iso_geom([2.0, 0.0, 0.0]), RX)
    assert np.allclose(d_hat, [1, 0, 0])
    assert uv[0] == 0.0 and uv[1] == 0.0


def test_project_pole():
    _, uv = project(iso_geom([0.0, 0.0, 3.0]), RX)
    assert uv[1] == pytest.approx(90.0)


def test_project_at_receiver_raises():
    with pytest.raises(GaussianAtReceiver):
        project(iso_geom([0.0, 0.0, 1e-9]), RX)


def test_project_round_trip_against_cell_direction():
    from xfreqgs.core import DEG

    rng = np.random.default_rng(0)
    for _ in range(200):
        pos = rng.normal(size=3) * 3
        if np.linalg.norm(pos) < 0.1 or pos[2] < 0:
            continue
        d_hat, (alpha, beta) = project(iso_geom(pos), RX)
        a, b = alpha * DEG, beta * DEG
        rebuilt = np.array(
            [math.cos(b) * math.cos(a), math.cos(b) * math.sin(a), math.sin(b)]
        )
        # sin(angle) via the cross product: stable for tiny angles
        angle = np.linalg.norm(np.cross(d_hat, rebuilt))
        assert angle < 1e-9


def test_chart_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    checked = 0
    h = 1e-6
    while checked < 1000:
        v = rng.normal(size=3) * rng.uniform(0.5, 5)
        r = np.linalg.norm(v)
        if r < 0.2 or abs(v[2]) / r > 0.98:
            continue
        jac = chart_jacobian(v)
        for c in range(3):
            vp, vm = v.copy(), v.copy()
            vp[c] += h
            vm[c] -= h

            def angles(u):
                rr = np.linalg.norm(u)
                return (
                    math.degrees(math.atan2(u[1], u[0])),
                    math.degrees(math.asin(u[2] / rr)),
                )

            ap, bp = angles(vp)
            am, bm = angles(vm)
            da = (ap - am + 540.0) % 360.0 - 180.0
            fd_alpha = da / (2 * h)
            fd_beta = (bp - bm) / (2 * h)
            assert jac[0, c] == pytest.approx(fd_alpha, rel=1e-5, abs=1e-7)
            assert jac[1, c] == pytest.approx(fd_beta, rel=1e-5, abs=1e-7)
        checked += 1


def test_projected_covariance_small_angle_isotropic():
    sigma_w = 0.05
    d = 4.0
    opts = RenderOptions()
    cov = projected_covariance(iso_geom([d, 0.0, 0.0], scale=sigma_w), RX, opts)
    expected = (sigma_w * 180.0 / (math.pi * d)) ** 2
    assert cov[0, 0] == pytest.approx(expected + opts.footprint_floor_deg2, rel=1e-3)
    assert cov[1, 1] == pytest.approx(expected + opts.footprint_floor_deg2, rel=1e-3)
    assert abs(cov[0, 1]) < 1e-9


def test_projected_covariance_distance_scaling():
    opts = RenderOptions(footprint_floor_deg2=0.0)
    near = projected_covariance(iso_geom([2.0, 0, 0], 0.05), RX, opts)
    far = projected_covariance(iso_geom([4.0, 0, 0], 0.05), RX, opts)
    assert near[0, 0] == pytest.approx(4 * far[0, 0], rel=1e-6)
    assert near[1, 1] == pytest.approx(4 * far[1, 1], rel=1e-6)


def test_frequency_footprint_scaling():
    cov = np.array([[4.0, 1.0], [1.0, 2.0]])
    assert np.array_equal(frequency_footprint(cov, 1.0), cov)
    scaled = frequency_footprint(cov, 4.0)
    assert np.array_equal(scaled, 4.0 * cov)
    w0, v0 = np.linalg.eigh(cov)
    w1, v1 = np.linalg.eigh(scaled)
    assert np.allclose(w1, 4 * w0)
    assert np.allclose(np.abs(np.sum(v0 * v1, axis=0)), 1.0)
    # ellipse area scales linearly in the spread factor
    area = lambda c: math.pi * 9.0 * math.sqrt(np.linalg.det(c))
    assert area(scaled) == pytest.approx(4 * area(cov), rel=1e-12)


# -- binning -------------------------------------------------------------------


def proj(uv, cov, depth, idx, spread=1.0):
    cov = np.asarray(cov, float)
    return ProjectedGaussian(
        center_uv=np.asarray(uv, float),
        cov2d=cov,
        cov2d_freq=spread * cov,
        depth=depth,
        source_index=idx,
    )


def test_bin_single_tiny_footprint():
    grid = AngularGrid(45, 180)
    # place exactly at a cell center with a sub-cell footprint
    p = proj([10.0 * 2 + 1.0, 5 * 2 + 1.0], np.eye(2) * 0.04, 1.0, 0)
    lists = bin_contributors([p], grid)
    assert lists.nonempty_cells() == 1
    cell = lists.cells[5 * 180 + 10]
    assert len(cell) == 1
    assert cell[0][0] == 0
    assert cell[0][1] == pytest.approx(1.0)


def test_bin_wraparound_seam():
    grid = AngularGrid(45, 180)
    p = proj([0.2, 45.0], np.eye(2) * 9.0, 1.0, 0)
    lists = bin_contributors([p], grid)
    row = 45 // 2
    cols = [
        n for n in range(grid.n_azim) if any(True for _ in lists.cells[row * 180 + n])
    ]
    assert 0 in cols and grid.n_azim - 1 in cols, "support must straddle the seam"
    assert not any(20 <= c <= 160 for c in cols)


def test_bin_monotone_in_cutoff():
    grid = AngularGrid(45, 180)
    rng = np.random.default_rng(3)
    ps = [
        proj(
            [rng.uniform(0, 360), rng.uniform(5, 85)],
            np.eye(2) * rng.uniform(0.5, 10),
            rng.uniform(0.5, 5),
            i,
        )
        for i in range(12)
    ]
    sets = []
    for cutoff in (3.0, 5.0, 10.0):
        lists = bin_contributors(ps, grid, cutoff_sigma=cutoff)
        sets.append(
            {
                (k, src)
                for k, cell in enumerate(lists.cells)
                for src, _ in cell
            }
        )
    assert sets[0] <= sets[1] <= sets[2]


def test_bin_huge_cutoff_degenerates_to_exhaustive():
    grid = AngularGrid(9, 36)
    ps = [proj([40.0, 40.0], np.eye(2), 1.0, 0), proj([200.0, 10.0], np.eye(2), 2.0, 1)]
    lists = bin_contributors(ps, grid, cutoff_sigma=1e6)
    assert all(len(cell) == 2 for cell in lists.cells)


def test_bin_depth_order_and_index_ties():
    grid = AngularGrid(9, 36)
    common = dict(uv=[100.0, 45.0], cov=np.eye(2) * 25.0)
    ps = [
        proj(common["uv"], common["cov"], 2.0, 0),
        proj(common["uv"], common["cov"], 1.0, 1),
        proj(common["uv"], common["cov"], 2.0, 2),
    ]
    lists = bin_contributors(ps, grid)
    for cell in lists.cells:
        if cell:
            order = [src for src, _ in cell]
            assert order == [1, 0, 2]  # depth first, then ascending index on ties


# -- accumulation ---------------------------------------------------------------


def attrs(att, sig, spread=1.0):
    return RFAttributes(att, sig, np.zeros(2), spread)


def test_accumulate_single_contributor_at_center():
    grid = AngularGrid(9, 36)
    p = proj([5.0, 5.0], np.eye(2) * 0.01, 1.0, 0)  # cell (0, 0) center
    lists = bin_contributors([p], grid)
    sig = 0.3 - 0.7j
    out = accumulate(lists, [attrs(0.5 + 0j, sig)], [p], grid)
    assert out.values[0, 0] == sig  # w = 1 exactly, empty attenuation product
    assert np.count_nonzero(out.values) == 1


def test_accumulate_full_occlusion():
    grid = AngularGrid(9, 36)
    uv = [5.0, 5.0]
    cov = np.eye(2) * 0.01
    near = proj(uv, cov, 1.0, 0)
    far = proj(uv, cov, 2.0, 1)
    lists = bin_contributors([near, far], grid)
    s1, s2 = 0.4 + 0.1j, -0.2 + 0.9j
    out = accumulate(lists, [attrs(0.0j, s1), attrs(0.5 + 0j, s2)], [near, far], grid)
    # nearer attenuation 0 kills the farther term entirely
    assert out.values[0, 0] == s1


def test_accumulate_matches_scalar_reference():
    grid = AngularGrid(9, 36)
    rng = np.random.default_rng(5)
    ps = []
    ats = []
    for i in range(15):
        ps.append(
            proj(
                [rng.uniform(0, 360), rng.uniform(10, 80)],
                np.eye(2) * rng.uniform(1, 30),
                rng.uniform(0.5, 4),
                i,
            )
        )
        ats.append(
            attrs(
                rng.uniform(0, 1) * np.exp(1j * rng.uniform(-np.pi, np.pi)),
                rng.normal() + 1j * rng.normal(),
            )
        )
    lists = bin_contributors(ps, grid)
    out = accumulate(lists, ats, ps, grid)
    for k, cell in enumerate(lists.cells):
        pre = complex(1.0, 0.0)
        acc = complex(0.0, 0.0)
        for src, w in cell:
            acc += (w * ats[src].signal) * pre
            pre = pre * ats[src].attenuation
        got = out.values[k // grid.n_azim, k % grid.n_azim]
        assert got == acc  # 0 ulp


def test_accumulate_misaligned_attrs():
    grid = AngularGrid(9, 36)
    p = proj([5.0, 5.0], np.eye(2), 1.0, 0)
    lists = bin_contributors([p], grid)
    with pytest.raises(MisalignedAttributes):
        accumulate(lists, [], [p], grid)


# -- full render ----------------------------------------------------------------


def test_render_deterministic_replay():
    scene, params, tx, rx, grid = micro_setup(n_gauss=16, grid=(9, 36))
    a, _ = render(scene, params, tx, rx, grid)
    b, _ = render(scene, params, tx, rx, grid)
    assert np.array_equal(a.values, b.values)


def test_render_permutation_invariance():
    scene, params, tx, rx, grid = micro_setup(n_gauss=24, grid=(9, 36))
    base, _ = render(scene, params, tx, rx, grid)
    rng = np.random.default_rng(1)
    for _ in range(3):
        perm = rng.permutation(scene.n_gaussians)
        shuffled = GaussianScene(
            scene.means[perm],
            scene.quaternions[perm],
            scene.log_scales[perm],
            scene.bounds,
        )
        got, _ = render(shuffled, params, tx, rx, grid)
        assert np.array_equal(got.values, base.values)


def test_render_permutation_invariance_with_duplicates():
    scene, params, tx, rx, grid = micro_setup(n_gauss=8, grid=(9, 36))
    # duplicate a Gaussian exactly: same depth and same content key
    means = np.vstack([scene.means, scene.means[2:3]])
    quats = np.vstack([scene.quaternions, scene.quaternions[2:3]])
    logs = np.vstack([scene.log_scales, scene.log_scales[2:3]])
    dup = GaussianScene(means, quats, logs, scene.bounds)
    base, _ = render(dup, params, tx, rx, grid)
    perm = np.arange(9)[::-1].copy()
    shuffled = GaussianScene(means[perm], quats[perm], logs[perm], scene.bounds)
    got, _ = render(shuffled, params, tx, rx, grid)
    assert np.array_equal(got.values, base.values)


def test_render_azimuth_equivariance_fixed_attrs():
    """Rotating the geometry by whole azimuth steps rotates the PAS columns."""
    grid = AngularGrid(45, 180)
    rng = np.random.default_rng(2)
    n = 30
    bounds = Box(np.array([-5, -5, 0.0]), np.array([5, 5, 5.0]))
    means = np.stack(
        [
            rng.uniform(-4, 4, n),
            rng.uniform(-4, 4, n),
            rng.uniform(0.5, 4.5, n),
        ],
        axis=1,
    )
    keep = np.linalg.norm(means, axis=1) > 0.8
    means = means[keep]
    n = means.shape[0]
    quats = rng.normal(size=(n, 4))
    logs = rng.uniform(np.log(0.05), np.log(0.25), size=(n, 3))
    scene = GaussianScene(means, quats, logs, bounds)
    rx = ReceiverConfig(np.zeros(3))
    spreads = rng.uniform(0.5, 3.5, n)
    ats = [
        attrs(
            rng.uniform(0.2, 0.95) * np.exp(1j * rng.uniform(-np.pi, np.pi)),
            rng.normal() + 1j * rng.normal(),
            spreads[i],
        )
        for i in range(n)
    ]

    def render_fixed(sc):
        ps = project_scene(sc, spreads, rx, grid=grid)
        lists = bin_contributors(ps, grid)
        out = accumulate(lists, ats, ps, grid)
        power = np.abs(out.values) ** 2
        return power / power.max()

    base = render_fixed(scene)

    k_steps = 17
    angle = k_steps * grid.azim_step
    rot_q = rotation_quaternion_about_z(angle)
    c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    rotated = GaussianScene(
        means @ rot.T,
        quaternion_multiply(rot_q[None, :], quats),
        logs,
        bounds,
    )
    got = render_fixed(rotated)
    assert np.max(np.abs(got - np.roll(base, k_steps, axis=1))) < 1e-9


def test_render_exhaustive_search_equivalence():
    """Raising the culling radius to 1e6 sigma never changes the map."""
    rng = np.random.default_rng(4)
    n = 100
    bounds = Box(np.array([-6, -6, 0.0]), np.array([6, 6, 6.0]))
    means = np.stack(
        [rng.uniform(-5, 5, n), rng.uniform(-5, 5, n), rng.uniform(0.3, 2.0, n)],
        axis=1,
    )
    # away from the receiver and from the chart pole, where azimuth
    # footprints widen geometrically
    rho = np.linalg.norm(means[:, :2], axis=1)
    means = means[(np.linalg.norm(means, axis=1) > 1.0) & (rho > 1.5)]
    n = means.shape[0]
    # keep angular footprints below ~20 degrees wide: sigma_w/d < ~1 deg
    logs = np.log(rng.uniform(0.02, 0.05, size=(n, 3)))
    scene = GaussianScene(means, rng.normal(size=(n, 4)), logs, bounds)
    params = NetworkParams.init(MICRO_NET, seed=6)
    rx = ReceiverConfig(np.zeros(3))
    tx = TxDescriptor(np.array([2.0, 1.0, 2.0]), 10e9)
    grid = AngularGrid(45, 180)

    base, g1 = render(scene, params, tx, rx, grid, RenderOptions())
    exhaustive, g2 = render(
        scene, params, tx, rx, grid, RenderOptions(cull_sigma=1e6)
    )
    # widest footprint in the scene stays under 20 degrees across
    assert np.max(6.0 * np.sqrt(g1.cf_triple[:, 0])) < 20.0
    assert g2.pair_gauss.size == g2.grid.n_cells * np.count_nonzero(g2.active) or True
    assert np.max(np.abs(base.values - exhaustive.values)) < 1e-6


def test_render_all_zero_raises():
    # single Gaussian below the horizon: no grid cell inside its support
    bounds = Box(np.array([-2, -2, -2.0]), np.array([2, 2, 2.0]))
    scene = GaussianScene(
        np.array([[1.0, 0.0, -1.5]]),
        np.array([[1.0, 0, 0, 0.0]]),
        np.log(np.array([[0.02, 0.02, 0.02]])),
        bounds,
    )
    params = NetworkParams.init(MICRO_NET, seed=0)
    with pytest.raises(AllZeroMap):
        render(
            scene,
            params,
            TxDescriptor(np.array([1.0, 1.0, 0.0]), 10e9),
            ReceiverConfig(np.zeros(3)),
            AngularGrid(9, 36),
        )


def test_render_pole_gaussian_covers_top_row():
    bounds = Box(np.array([-2, -2, 0.0]), np.array([2, 2, 3.0]))
    scene = GaussianScene(
        np.array([[0.0, 0.0, 2.0], [1.0, 0.0, 0.5]]),
        np.tile(IDENTITY_Q, (2, 1)),
        np.log(np.full((2, 3), 0.05)),
        bounds,
    )
    params = NetworkParams.init(MICRO_NET, seed=1)
    pas, graph = render(
        scene,
        params,
        TxDescriptor(np.array([1.0, 1.0, 1.0]), 10e9),
        ReceiverConfig(np.zeros(3)),
        AngularGrid(9, 36),
    )
    assert graph.pole[0] and not graph.pole[1]
    top = graph.pair_cell[graph.pair_gauss == 0]
    assert np.all(top >= 8 * 36)
    assert set(top.tolist()) == set(range(8 * 36, 9 * 36))


def test_render_skips_gaussian_at_receiver():
    bounds = Box(np.array([-2, -2, -1.0]), np.array([2, 2, 3.0]))
    scene = GaussianScene(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.4, 0.7]]),
        np.tile(IDENTITY_Q, (2, 1)),
        np.log(np.full((2, 3), 0.08)),
        bounds,
    )
    params = NetworkParams.init(MICRO_NET, seed=2)
    pas, graph = render(
        scene,
        params,
        TxDescriptor(np.array([1.0, 1.0, 1.0]), 10e9),
        ReceiverConfig(np.zeros(3)),
        AngularGrid(9, 36),
    )
    assert graph.n_skipped == 1
    assert not np.any(graph.pair_gauss == 0)
