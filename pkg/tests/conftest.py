import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from scripts.datasets import SyntheticSpec, make_synthetic
from scripts.netzoo import cnet_small, resnet20_small
from scripts.trainer import TrainConfig, evaluate, fit, init_network

DTYPE = "float64"


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PRUNE_OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.setenv("PRUNE_DATA_ROOT", str(tmp_path / "data"))
    monkeypatch.setenv("PRUNE_DTYPE", DTYPE)
    monkeypatch.setenv("PRUNE_WORKERS", "1")
    monkeypatch.setenv("LOG_LEVEL", "WARNING")


@pytest.fixture(scope="session")
def data():
    return make_synthetic(SyntheticSpec(samples=256, seed=7), DTYPE)


@pytest.fixture(scope="session")
def cnet_spec():
    return cnet_small()


@pytest.fixture(scope="session")
def resnet_spec():
    return resnet20_small()


@pytest.fixture(scope="session")
def trained_cnet(data, cnet_spec):
    net = init_network(cnet_spec, seed=0, dtype=DTYPE)
    net, _ = fit(net, data, TrainConfig(epochs=6, lr=0.05, batch_size=32, seed=0))
    net.metadata = {"accuracy": evaluate(net, data.val)}
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_masks(spec, rng):
    """Random MaskSet keeping at least one channel per flag"""
    from scripts.profiles import MaskSet

    masks = {}
    for f in spec.flags:
        mask = rng.random(f.length) < rng.uniform(0.2, 0.9)
        mask[rng.integers(f.length)] = True
        masks[f.id] = mask
    return MaskSet(masks)


def with_random_buffers(net, rng):
    """Copy of `net` with non-trivial batchnorm statistics"""
    weights = dict(net.weights)
    for name in net.spec.buffer_shapes():
        if name.endswith(".running_mean"):
            weights[name] = rng.normal(0.0, 0.5, weights[name].shape)
        else:
            weights[name] = rng.uniform(0.5, 2.0, weights[name].shape)
    for name in net.spec.param_shapes():
        if name.endswith((".gamma", ".beta")):
            weights[name] = rng.normal(1.0 if name.endswith(".gamma") else 0.0, 0.3, weights[name].shape)
    return type(net)(net.spec, weights, dict(net.metadata))


@pytest.fixture
def make_masks():
    return random_masks


@pytest.fixture
def randomize_buffers():
    return with_random_buffers
