import numpy as np
import pytest
import torch

from detector import DenseDetector, DetectorConfig
from geometry import Box
from synthdata import CategorySpec, SceneSpec, make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def tiny_config():
    """Detector small enough for finite-difference checks (about 1.2k parameters)."""
    return DetectorConfig(stride=4, num_classes=2, embed_dim=4, channels=[4, 8])


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return DenseDetector(tiny_config).double()


@pytest.fixture
def small_roster():
    return [
        CategorySpec(0, "red-disc", "disc", "red", False, "KNOWN"),
        CategorySpec(1, "blue-square", "square", "blue", False, "KNOWN"),
        CategorySpec(2, "green-triangle", "triangle", "green", False, "UNKNOWN"),
        CategorySpec(3, "yellow-ring", "ring", "yellow", False, "UNKNOWN"),
    ]


@pytest.fixture
def small_spec(small_roster):
    return SceneSpec(image_size=(32, 32), instance_range=(1, 3), size_range=(8, 12), roster=small_roster)


def random_box(rng: np.random.Generator, limit: int = 10, integer: bool = True) -> Box:
    """Valid box inside [0, limit]^2, possibly of zero area."""
    if integer:
        xs = np.sort(rng.integers(0, limit + 1, size=2))
        ys = np.sort(rng.integers(0, limit + 1, size=2))
    else:
        xs = np.sort(rng.uniform(0, limit, size=2))
        ys = np.sort(rng.uniform(0, limit, size=2))
    return Box(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1]))
