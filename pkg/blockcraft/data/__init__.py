"""
Dataset loaders, synthetic data, batching and augmentation.
"""

from blockcraft.data.datasets import (
    Dataset,
    load_cifar10,
    load_mnist,
    synthetic,
    synthetic_pair,
)
from blockcraft.data.batching import AugmentPolicy, Batch, augment, batches, epoch_order

__all__ = [
    "Dataset",
    "load_cifar10",
    "load_mnist",
    "synthetic",
    "synthetic_pair",
    "AugmentPolicy",
    "Batch",
    "augment",
    "batches",
    "epoch_order",
]
