import numpy as np
import pytest

from xfreqgs.core import AngularGrid, Box, PASMap, ReceiverConfig, TxDescriptor
from xfreqgs.errors import FileFormatError
from xfreqgs.network import NetConfig, NetworkParams
from xfreqgs.renderer import RenderOptions
from xfreqgs.scene import init_scene
from xfreqgs.storage import (
    Checkpoint,
    generate_dataset,
    load_checkpoint,
    load_dataset,
    load_manifest,
    load_scene_file,
    make_checkpoint_config,
    read_pas_file,
    save_checkpoint,
    write_default_scene,
    write_pas_file,
)
from xfreqgs.training import OptimizerState, TrainConfig

from conftest import MICRO_NET


def make_pas(rng, grid):
    vals = rng.uniform(0, 1, size=(grid.n_elev, grid.n_azim)).astype(np.float32)
    vals = vals.astype(np.float64)
    vals[0, 0] = 1.0
    return PASMap(grid, vals)


def test_pas_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    grid = AngularGrid(45, 180)
    pas = make_pas(rng, grid)
    tx = TxDescriptor(np.array([1.25, -2.5, 0.75]), 24.25e9)
    p1 = tmp_path / "a.xpas"
    p2 = tmp_path / "b.xpas"
    write_pas_file(p1, pas, tx)
    content = read_pas_file(p1)
    assert content.pas.grid == grid
    assert content.tx.frequency == 24.25e9
    assert np.array_equal(content.tx.position, tx.position)
    write_pas_file(p2, content.pas, content.tx)
    assert p1.read_bytes() == p2.read_bytes()


def test_pas_file_rejects_corruption(tmp_path):
    rng = np.random.default_rng(1)
    grid = AngularGrid(9, 36)
    p = tmp_path / "a.xpas"
    write_pas_file(p, make_pas(rng, grid), TxDescriptor(np.ones(3), 1e9))
    raw = bytearray(p.read_bytes())
    raw[0] = ord("Y")
    p.write_bytes(bytes(raw))
    with pytest.raises(FileFormatError):
        read_pas_file(p)
    # truncated payload
    write_pas_file(p, make_pas(rng, grid), TxDescriptor(np.ones(3), 1e9))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FileFormatError):
        read_pas_file(p)


def _checkpoint(tmp_path):
    bounds = Box(np.zeros(3), np.array([6.0, 4.0, 3.0]))
    scene = init_scene(12, bounds, seed=0)
    params = NetworkParams.init(MICRO_NET, seed=1)
    opt = OptimizerState.init(scene, params)
    opt.m[0] += 0.25
    opt.step_count = 7
    rng = np.random.default_rng(42)
    rng.integers(0, 10, size=13)
    cfg = make_checkpoint_config(
        TrainConfig(iterations=100), MICRO_NET, RenderOptions()
    )
    return Checkpoint(
        config=cfg,
        scene=scene,
        params=params,
        opt_state=opt,
        iteration=7,
        rng_state=rng.bit_generator.state,
        grid=AngularGrid(45, 180),
        rx=ReceiverConfig(np.array([3.0, 2.0, 1.0])),
    )


def test_checkpoint_round_trip_bit_exact(tmp_path):
    ck = _checkpoint(tmp_path)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, ck)
    loaded = load_checkpoint(p1)
    save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(loaded.scene.means, ck.scene.means)
    assert np.array_equal(loaded.opt_state.m[0], ck.opt_state.m[0])
    assert loaded.iteration == 7
    assert loaded.rng_state == ck.rng_state
    assert loaded.params.cfg == MICRO_NET
    assert loaded.grid == ck.grid
    # resuming the rng from the stored state continues the stream
    r1 = np.random.default_rng()
    r1.bit_generator.state = loaded.rng_state
    r2 = np.random.default_rng(42)
    r2.integers(0, 10, size=13)
    assert r1.integers(0, 1_000_000) == r2.integers(0, 1_000_000)


def test_checkpoint_missing_file():
    with pytest.raises(FileFormatError):
        load_checkpoint("/nonexistent/path.ckpt")


def test_default_scene_parses(tmp_path):
    path = tmp_path / "scene.yaml"
    write_default_scene(path)
    scene = load_scene_file(path)
    assert 0 <= scene.max_reflection_order <= 5
    assert 0 < scene.beamwidth_deg <= 10
    assert scene.room.contains(scene.rx.center)
    assert len(scene.wall_materials) == 6
    assert scene.wall_materials[0].permittivity(1e9) > 1.0
    # panels are dispersive: permittivity falls with frequency
    assert scene.wall_materials[0].permittivity(94e9) < scene.wall_materials[
        0
    ].permittivity(1e9)


def test_scene_file_errors(tmp_path):
    path = tmp_path / "scene.yaml"
    path.write_text("room: {min: [0,0,0]}\n")
    with pytest.raises(FileFormatError):
        load_scene_file(path)


def _tiny_dataset(tmp_path, seed=3):
    tmp_path.mkdir(parents=True, exist_ok=True)
    scene_path = tmp_path / "scene.yaml"
    write_default_scene(scene_path)
    out = tmp_path / f"ds{seed}"
    grid = AngularGrid(9, 36)
    return generate_dataset(
        scene_path, out, grid, n_tx=2, frequencies_hz=[1e9, 10e9, 24.25e9], seed=seed
    )


def test_generate_dataset_and_load(tmp_path):
    manifest_path = _tiny_dataset(tmp_path)
    manifest, samples = load_dataset(manifest_path)
    assert len(samples) == 6
    assert sorted({s.tx.frequency for s in samples}) == [1e9, 10e9, 24.25e9]
    for s in samples:
        assert s.gt.values.max() == 1.0
        assert manifest.room.contains(s.tx.position, margin=0.49)


def test_generate_dataset_deterministic(tmp_path):
    p1 = _tiny_dataset(tmp_path / "a", seed=9)
    p2 = _tiny_dataset(tmp_path / "b", seed=9)
    files1 = sorted(p1.parent.iterdir())
    files2 = sorted(p2.parent.iterdir())
    assert [f.name for f in files1] == [f.name for f in files2]
    for f1, f2 in zip(files1, files2):
        assert f1.read_bytes() == f2.read_bytes(), f1.name


def test_manifest_validation_names_offending_file(tmp_path):
    manifest_path = _tiny_dataset(tmp_path)
    manifest = load_manifest(manifest_path)
    # corrupt one sample with a wrong-grid file
    bad_name = manifest.samples[2]["file"]
    rng = np.random.default_rng(0)
    wrong_grid = AngularGrid(15, 24)
    write_pas_file(
        manifest_path.parent / bad_name,
        make_pas(rng, wrong_grid),
        TxDescriptor(np.ones(3), 1e9),
    )
    with pytest.raises(FileFormatError) as err:
        load_dataset(manifest_path)
    assert bad_name in str(err.value)


def test_manifest_rejects_duplicate_ids(tmp_path):
    manifest_path = _tiny_dataset(tmp_path)
    text = manifest_path.read_text()
    text = text.replace("id: tx0001_f00", "id: tx0000_f00", 1)
    manifest_path.write_text(text)
    with pytest.raises(FileFormatError):
        load_manifest(manifest_path)


def test_manifest_missing_path():
    with pytest.raises(FileFormatError) as err:
        load_manifest("/no/such/manifest.yaml")
    assert "/no/such/manifest.yaml" in str(err.value)
