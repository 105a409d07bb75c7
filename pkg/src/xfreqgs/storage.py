"""Persistent formats: PAS grid files, dataset manifests, checkpoints, and
the YAML scene/config schemas.

Grid files and checkpoints are fixed-layout little-endian binary so that
byte-identical round trips are meaningful; manifests and configs are YAML.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from .core import AngularGrid, Box, PASMap, ReceiverConfig, TxDescriptor
from .errors import FileFormatError, ValidationError
from .network import NetConfig, NetworkParams
from .physics import MaterialSpec, SceneDescriptor, WALL_NAMES, synthesize_pas
from .renderer import RenderOptions
from .scene import GaussianScene
from .training import OptimizerState, TrainConfig

PAS_MAGIC = b"XPAS"
PAS_VERSION = 1
CKPT_MAGIC = b"XCKP"
CKPT_VERSION = 1
MANIFEST_VERSION = 1


# -- PAS grid files -----------------------------------------------------------


def write_pas_file(path, pas: PASMap, tx: TxDescriptor) -> None:
    """Layout: magic, version u16, rows u16, cols u16, tx 3xf64, freq f64,
    then rows*cols float32 values, row-major, all little-endian."""
    grid = pas.grid
    header = PAS_MAGIC + struct.pack(
        "<HHH3dd",
        PAS_VERSION,
        grid.n_elev,
        grid.n_azim,
        *tx.position,
        tx.frequency,
    )
    values = pas.values.astype("<f4").tobytes()
    Path(path).write_bytes(header + values)


class PasFileContent(NamedTuple):
    pas: PASMap
    tx: TxDescriptor


def read_pas_file(path) -> PasFileContent:
    raw = Path(path).read_bytes()
    if raw[:4] != PAS_MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, rows, cols, px, py, pz, freq = struct.unpack("<HHH3dd", raw[4 : 4 + 38])
    if version != PAS_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    values = np.frombuffer(raw[4 + 38 :], dtype="<f4")
    if values.size != rows * cols:
        raise FileFormatError(
            f"{path}: expected {rows * cols} values, found {values.size}"
        )
    if np.any(values < 0):
        raise FileFormatError(f"{path}: negative power values")
    grid = AngularGrid(rows, cols)
    pas = PASMap(grid, values.astype(np.float64).reshape(rows, cols))
    return PasFileContent(pas, TxDescriptor(np.array([px, py, pz]), freq))


def export_pas_csv(path, pas: PASMap) -> None:
    np.savetxt(path, pas.values, delimiter=",", fmt="%.9g")


# -- scene files --------------------------------------------------------------


def load_scene_file(path) -> SceneDescriptor:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise FileFormatError(f"{path}: invalid YAML: {e}") from e
    try:
        room = Box(np.array(doc["room"]["min"]), np.array(doc["room"]["max"]))
        materials = {
            name: MaterialSpec(
                spec["frequencies_hz"],
                spec["permittivity"],
                spec["permeability"],
                name=name,
            )
            for name, spec in doc["materials"].items()
        }
        walls = tuple(materials[doc["walls"][w]] for w in WALL_NAMES)
        rx = ReceiverConfig(
            np.array(doc["rx"]["center"]),
            float(doc["rx"].get("sphere_radius", 0.5)),
        )
        return SceneDescriptor(
            room=room,
            wall_materials=walls,
            rx=rx,
            max_reflection_order=int(doc.get("max_reflection_order", 2)),
            beamwidth_deg=float(doc.get("beamwidth_deg", 8.0)),
        )
    except KeyError as e:
        raise FileFormatError(f"{path}: missing scene key {e}") from e


def scene_file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# The default environment is a reverberant test enclosure lined with strongly
# dispersive reflective panels.  Reflectivity falls sharply with carrier
# frequency, so lobe amplitudes shift smoothly across the band (learnable and
# interpolatable), while mid-order multipath adds frequency-selective
# interference texture.  Panel permittivities are deliberately exaggerated
# versus everyday building materials to exercise cross-frequency behaviour at
# desk scale.
def _panel(base: float) -> dict:
    return {
        "frequencies_hz": [1e8, 1e9, 1e10, 1e11],
        "permittivity": [1.3 * base, base, base / 4.5, base / 18.0],
        "permeability": [1.0, 1.0, 1.0, 1.0],
    }


DEFAULT_MATERIALS = {
    "panel_a": _panel(120.0),
    "panel_b": _panel(138.0),
    "panel_c": _panel(156.0),
    "panel_d": _panel(174.0),
    "panel_e": _panel(192.0),
    "panel_f": _panel(210.0),
}


def default_scene_dict() -> dict:
    return {
        "room": {"min": [0.0, 0.0, 0.0], "max": [6.0, 4.0, 3.0]},
        "materials": DEFAULT_MATERIALS,
        "walls": {
            "x_min": "panel_a",
            "x_max": "panel_b",
            "y_min": "panel_c",
            "y_max": "panel_d",
            "z_min": "panel_e",
            "z_max": "panel_f",
        },
        "rx": {"center": [3.0, 2.0, 1.0], "sphere_radius": 0.5},
        "max_reflection_order": 4,
        "beamwidth_deg": 10.0,
    }


def write_default_scene(path) -> None:
    Path(path).write_text(yaml.safe_dump(default_scene_dict(), sort_keys=True))


# -- dataset manifests --------------------------------------------------------


class Sample(NamedTuple):
    id: str
    tx: TxDescriptor
    gt: PASMap
    path: str


@dataclass
class DatasetManifest:
    grid: AngularGrid
    scene_sha256: str
    generator_seed: int
    room: Box
    rx: ReceiverConfig
    samples: list  # dicts: {id, tx, frequency_hz, file}

    def frequencies(self) -> list[float]:
        return sorted({float(s["frequency_hz"]) for s in self.samples})


def write_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "format_version": MANIFEST_VERSION,
        "grid": {"n_elev": manifest.grid.n_elev, "n_azim": manifest.grid.n_azim},
        "scene_sha256": manifest.scene_sha256,
        "generator_seed": manifest.generator_seed,
        "room": {
            "min": [float(x) for x in manifest.room.lo],
            "max": [float(x) for x in manifest.room.hi],
        },
        "rx": {
            "center": [float(x) for x in manifest.rx.center],
            "sphere_radius": float(manifest.rx.sphere_radius),
        },
        "samples": manifest.samples,
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"manifest not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise FileFormatError(f"{path}: invalid YAML: {e}") from e
    try:
        if int(doc["format_version"]) != MANIFEST_VERSION:
            raise FileFormatError(f"{path}: unsupported manifest version")
        grid = AngularGrid(int(doc["grid"]["n_elev"]), int(doc["grid"]["n_azim"]))
        manifest = DatasetManifest(
            grid=grid,
            scene_sha256=str(doc["scene_sha256"]),
            generator_seed=int(doc["generator_seed"]),
            room=Box(np.array(doc["room"]["min"]), np.array(doc["room"]["max"])),
            rx=ReceiverConfig(
                np.array(doc["rx"]["center"]), float(doc["rx"]["sphere_radius"])
            ),
            samples=list(doc["samples"]),
        )
    except KeyError as e:
        raise FileFormatError(f"{path}: missing manifest key {e}") from e
    ids = [s["id"] for s in manifest.samples]
    if len(ids) != len(set(ids)):
        raise FileFormatError(f"{path}: duplicate sample ids")
    return manifest


def load_dataset(manifest_path, validate: bool = True) -> tuple[DatasetManifest, list[Sample]]:
    """Manifest plus eagerly loaded samples, in manifest order."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    samples = []
    for entry in manifest.samples:
        fpath = base / entry["file"]
        if not fpath.exists():
            raise FileFormatError(f"sample file missing: {fpath}")
        content = read_pas_file(fpath)
        if validate:
            if content.pas.grid != manifest.grid:
                raise FileFormatError(
                    f"{fpath}: grid {content.pas.grid.n_elev}x{content.pas.grid.n_azim}"
                    f" does not match manifest grid "
                    f"{manifest.grid.n_elev}x{manifest.grid.n_azim}"
                )
            want_tx = np.asarray(entry["tx"], dtype=np.float64)
            if not np.allclose(content.tx.position, want_tx, atol=1e-9) or not np.isclose(
                content.tx.frequency, float(entry["frequency_hz"])
            ):
                raise FileFormatError(f"{fpath}: header disagrees with manifest entry")
        samples.append(
            Sample(
                id=str(entry["id"]),
                tx=content.tx,
                gt=content.pas,
                path=str(fpath),
            )
        )
    return manifest, samples


# -- checkpoints --------------------------------------------------------------

_DTYPE_CODES = {0: "<f8", 1: "<i8", 2: "<u8"}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


def _pack_blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_TO_CODE[np.dtype(arr.dtype.str.replace(">", "<"))]
    nm = name.encode()
    out = struct.pack("<H", len(nm)) + nm
    out += struct.pack("<BB", code, arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    out += _pack_blob(arr.astype(_DTYPE_CODES[code]).tobytes())
    return out


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise FileFormatError("checkpoint truncated")
        out = self.raw[self.off : self.off + n]
        self.off += n
        return out

    def blob(self) -> bytes:
        (n,) = struct.unpack("<I", self.take(4))
        return self.take(n)

    def array(self) -> tuple[str, np.ndarray]:
        (nlen,) = struct.unpack("<H", self.take(2))
        name = self.take(nlen).decode()
        code, ndim = struct.unpack("<BB", self.take(2))
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim)) if ndim else ()
        data = self.blob()
        arr = np.frombuffer(data, dtype=_DTYPE_CODES[code]).reshape(shape)
        return name, arr.astype(arr.dtype.newbyteorder("="))


@dataclass
class Checkpoint:
    config: dict  # TrainConfig / NetConfig / RenderOptions snapshots + metadata
    scene: GaussianScene
    params: NetworkParams
    opt_state: OptimizerState
    iteration: int
    rng_state: dict
    grid: AngularGrid
    rx: ReceiverConfig

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.config["train"])

    @property
    def render_options(self) -> RenderOptions:
        return RenderOptions(**self.config["render"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    cfg = dict(ckpt.config)
    cfg["iteration"] = ckpt.iteration
    cfg["grid"] = {"n_elev": ckpt.grid.n_elev, "n_azim": ckpt.grid.n_azim}
    cfg["rx"] = {
        "center": [float(x) for x in ckpt.rx.center],
        "sphere_radius": float(ckpt.rx.sphere_radius),
    }
    out = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    out.append(_pack_blob(yaml.safe_dump(cfg, sort_keys=True).encode()))
    out.append(_pack_blob(json.dumps(ckpt.rng_state, sort_keys=True).encode()))

    arrays: list[tuple[str, np.ndarray]] = [
        ("scene/means", ckpt.scene.means),
        ("scene/quaternions", ckpt.scene.quaternions),
        ("scene/log_scales", ckpt.scene.log_scales),
        ("scene/bounds_lo", ckpt.scene.bounds.lo),
        ("scene/bounds_hi", ckpt.scene.bounds.hi),
    ]
    for i, arr in enumerate(ckpt.params.arrays()):
        arrays.append((f"net/{i}", arr))
    for i, arr in enumerate(ckpt.opt_state.m):
        arrays.append((f"opt/m{i}", arr))
    for i, arr in enumerate(ckpt.opt_state.v):
        arrays.append((f"opt/v{i}", arr))
    out.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        out.append(_pack_array(name, arr))
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"checkpoint not found: {path}")
    rd = _Reader(path.read_bytes())
    if rd.take(4) != CKPT_MAGIC:
        raise FileFormatError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<H", rd.take(2))
    if version != CKPT_VERSION:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version}")
    config = yaml.safe_load(rd.blob().decode())
    rng_state = json.loads(rd.blob().decode())
    (n_arrays,) = struct.unpack("<I", rd.take(4))
    arrays = dict(rd.array() for _ in range(n_arrays))

    bounds = Box(arrays["scene/bounds_lo"], arrays["scene/bounds_hi"])
    scene = GaussianScene(
        arrays["scene/means"].copy(),
        arrays["scene/quaternions"].copy(),
        arrays["scene/log_scales"].copy(),
        bounds,
    )
    net_cfg = NetConfig(**config["network"])
    net_arrays = []
    i = 0
    while f"net/{i}" in arrays:
        net_arrays.append(arrays[f"net/{i}"].copy())
        i += 1
    params = NetworkParams.from_arrays(net_arrays, net_cfg)
    m, v = [], []
    i = 0
    while f"opt/m{i}" in arrays:
        m.append(arrays[f"opt/m{i}"].copy())
        v.append(arrays[f"opt/v{i}"].copy())
        i += 1
    opt_state = OptimizerState(m=m, v=v, step_count=int(config["iteration"]))
    grid = AngularGrid(int(config["grid"]["n_elev"]), int(config["grid"]["n_azim"]))
    rx = ReceiverConfig(
        np.array(config["rx"]["center"]), float(config["rx"]["sphere_radius"])
    )
    return Checkpoint(
        config=config,
        scene=scene,
        params=params,
        opt_state=opt_state,
        iteration=int(config["iteration"]),
        rng_state=rng_state,
        grid=grid,
        rx=rx,
    )


def make_checkpoint_config(
    train_cfg: TrainConfig,
    net_cfg: NetConfig,
    options: RenderOptions,
    scene_init: dict | None = None,
) -> dict:
    return {
        "train": asdict(train_cfg),
        "network": asdict(net_cfg),
        "render": asdict(options),
        "scene_init": dict(scene_init or {}),
    }


# -- dataset generation -------------------------------------------------------

TX_CLEARANCE_M = 0.5  # minimum distance from walls and from the RX center


def sample_tx_positions(
    room: Box, rx_center: np.ndarray, n: int, seed: int
) -> np.ndarray:
    """Uniform TX positions with wall and RX clearance; seeded and exact."""
    lo = room.lo + TX_CLEARANCE_M
    hi = room.hi - TX_CLEARANCE_M
    if np.any(hi <= lo):
        raise ValidationError("room too small for the TX wall clearance")
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3))
    count = 0
    while count < n:
        cand = rng.uniform(lo, hi)
        if np.linalg.norm(cand - rx_center) >= TX_CLEARANCE_M:
            out[count] = cand
            count += 1
    return out


def generate_dataset(
    scene_path,
    out_dir,
    grid: AngularGrid,
    n_tx: int,
    frequencies_hz: list[float],
    seed: int,
    progress_fn=None,
) -> Path:
    """Render ground truth for every (TX, frequency) pair; write files and a
    manifest.  Deterministic per seed.  Returns the manifest path."""
    scene = load_scene_file(scene_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    positions = sample_tx_positions(scene.room, scene.rx.center, n_tx, seed)
    entries = []
    total = n_tx * len(frequencies_hz)
    done = 0
    for ti, pos in enumerate(positions):
        for fi, freq in enumerate(frequencies_hz):
            tx = TxDescriptor(pos, float(freq))
            pas = synthesize_pas(scene, tx, grid)
            name = f"tx{ti:04d}_f{fi:02d}.xpas"
            write_pas_file(out_dir / name, pas, tx)
            entries.append(
                {
                    "id": f"tx{ti:04d}_f{fi:02d}",
                    "tx": [float(x) for x in pos],
                    "frequency_hz": float(freq),
                    "file": name,
                }
            )
            done += 1
            if progress_fn is not None:
                progress_fn(done, total)
    manifest = DatasetManifest(
        grid=grid,
        scene_sha256=scene_file_hash(scene_path),
        generator_seed=seed,
        room=scene.room,
        rx=scene.rx,
        samples=entries,
    )
    manifest_path = out_dir / "manifest.yaml"
    write_manifest(manifest_path, manifest)
    return manifest_path
