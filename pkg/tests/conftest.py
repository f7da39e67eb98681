"""
Shared fixtures: 64-bit precision, tiny architectures and synthetic data.
"""

import os

import pytest

from blockcraft.core.tensor import Precision, precision
from blockcraft.data.batching import batches
from blockcraft.data.datasets import synthetic_pair
from blockcraft.models.network import build_model
from blockcraft.models.spec import ArchitectureSpec, StemSpec, UnitKind, UnitSpec

MNIST_ENV = "BLOCKCRAFT_MNIST_DIR"


def tiny_vgg_spec(num_classes: int = 3) -> ArchitectureSpec:
    """Four conv units on 1x6x6 inputs (K up to 4)."""
    return ArchitectureSpec(
        "tiny-vgg",
        (1, 6, 6),
        num_classes,
        (
            UnitSpec(UnitKind.VGG, 1, 3),
            UnitSpec(UnitKind.VGG, 3, 4, pool=True),
            UnitSpec(UnitKind.VGG, 4, 4),
            UnitSpec(UnitKind.VGG, 4, 4),
        ),
    )


def tiny_resnet_spec(num_classes: int = 3) -> ArchitectureSpec:
    """Stem plus two basic units, the second with a projection shortcut."""
    return ArchitectureSpec(
        "tiny-resnet",
        (1, 6, 6),
        num_classes,
        (
            UnitSpec(UnitKind.BASIC, 3, 3),
            UnitSpec(UnitKind.BASIC, 3, 4, stride=2),
        ),
        stem=StemSpec(1, 3),
    )


@pytest.fixture
def float64():
    """Run the test in 64-bit precision."""
    with precision(Precision.FLOAT64) as p:
        yield p


@pytest.fixture
def tiny_spec():
    return tiny_vgg_spec()


@pytest.fixture
def tiny_data(float64):
    """Train/test synthetic splits matching :func:`tiny_vgg_spec`."""
    return synthetic_pair(3, 8, (1, 6, 6), seed=5, test_per_class=4)


@pytest.fixture
def make_model(float64):
    """Factory for identically seeded tiny models."""

    def factory(k: int = 4, seed: int = 0, spec: ArchitectureSpec = None):
        return build_model(spec or tiny_vgg_spec(), k, seed=seed)

    return factory


@pytest.fixture
def batch_list(tiny_data):
    """Materialized batch stream over several epochs."""

    def factory(count: int, batch_size: int = 6, seed: int = 1):
        train, _ = tiny_data
        out, epoch = [], 0
        while len(out) < count:
            out.extend(batches(train, batch_size, seed, epoch))
            epoch += 1
        return out[:count]

    return factory


@pytest.fixture
def mnist_dir():
    """Directory of the real MNIST IDX files, or skip."""
    path = os.environ.get(MNIST_ENV)
    if not path or not os.path.isdir(path):
        pytest.skip(f"set ${MNIST_ENV} to run MNIST learning tests")
    return path
