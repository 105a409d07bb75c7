import os

# Pin BLAS pools before numpy loads anywhere: the determinism tests compare
# renders bit for bit.
os.environ.setdefault("OMP_NUM_THREADS", "2")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "2")

import numpy as np
import pytest

from xfreqgs.core import AngularGrid, Box, ReceiverConfig, TxDescriptor
from xfreqgs.network import NetConfig, NetworkParams
from xfreqgs.physics import MaterialSpec, SceneDescriptor
from xfreqgs.scene import init_scene

TABLE_F = [1e8, 1e9, 1e10, 1e11]


def material(eps, mu=1.0, name="m"):
    if np.isscalar(eps):
        eps = [eps] * len(TABLE_F)
    if np.isscalar(mu):
        mu = [mu] * len(TABLE_F)
    return MaterialSpec(TABLE_F, eps, mu, name=name)


@pytest.fixture
def vacuum_material():
    return material(1.0, 1.0, "vacuum")


@pytest.fixture
def concrete():
    return material([5.5, 5.31, 5.24, 5.1], 1.0, "concrete")


def make_room_scene(
    lo=(0.0, 0.0, 0.0),
    hi=(6.0, 4.0, 3.0),
    rx=(3.0, 2.0, 1.0),
    order=2,
    beamwidth=8.0,
    materials=None,
):
    room = Box(np.array(lo), np.array(hi))
    if materials is None:
        materials = tuple(
            material([5.5, 5.31, 5.24, 5.1], 1.0, f"wall{i}") for i in range(6)
        )
    return SceneDescriptor(
        room=room,
        wall_materials=materials,
        rx=ReceiverConfig(np.array(rx)),
        max_reflection_order=order,
        beamwidth_deg=beamwidth,
    )


@pytest.fixture
def room_scene():
    return make_room_scene()


MICRO_NET = NetConfig(hidden=8, head_hidden=4, latent_dim=4, pos_bands=2, freq_bands=1)


def micro_setup(n_gauss=4, grid=(8, 16), seed=3, net_seed=5):
    """Small differentiable pipeline: n Gaussians, coarse grid, width-8 net."""
    bounds = Box(np.array([0, 0, 0.0]), np.array([4, 4, 3.0]))
    scene = init_scene(n_gauss, bounds, seed=seed, initial_scale=0.8)
    params = NetworkParams.init(MICRO_NET, seed=net_seed)
    rx = ReceiverConfig(np.array([2.0, 2.0, 1.0]))
    tx = TxDescriptor(np.array([3.0, 2.5, 1.5]), 10e9)
    return scene, params, tx, rx, AngularGrid(*grid)
