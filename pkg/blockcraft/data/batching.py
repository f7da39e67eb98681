"""
Deterministic mini-batching and augmentation.
"""

from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from blockcraft.core.tensor import Tensor
from blockcraft.data.datasets import Dataset
from blockcraft.random.distributions import RandomGenerator
from blockcraft.random.streams import derive_seed_sequence

PAD = 4


class AugmentPolicy(Enum):
    """Training-time augmentation policies."""

    NONE = "none"
    PAD4_CROP_FLIP = "pad4-crop-flip"


@dataclass(frozen=True)
class Batch:
    """
    One mini-batch.

    Attributes
    ----------
    images : Tensor
        ``[B, C, H, W]``
    labels : np.ndarray
        ``B`` class indices
    indices : np.ndarray
        Dataset positions of the samples
    """

    images: Tensor
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def epoch_order(size: int, seed: int, epoch: int) -> np.ndarray:
    """Permutation of ``0..size-1`` determined by ``(seed, epoch)``."""
    rng = RandomGenerator.from_seed_sequence(derive_seed_sequence(seed, "shuffle", epoch))
    return rng.permutation(size)


def num_batches(size: int, batch_size: int) -> int:
    """Batches per epoch, counting a trailing partial batch."""
    return -(-size // batch_size)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """
    Yield the batches of one epoch.

    Every sample appears exactly once; the trailing partial batch is kept.

    Examples
    --------
    >>> [len(b) for b in batches(data_of_10, 3, seed=0, epoch=0)]
    [3, 3, 3, 1]
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = epoch_order(len(dataset), seed, epoch)
    images = dataset.images.data
    for start in range(0, order.size, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(Tensor.wrap(images[idx]), dataset.labels[idx], idx)


def augment(
    batch: Batch,
    policy: Union[str, AugmentPolicy],
    rng: RandomGenerator,
    force_flip: Optional[bool] = None,
    force_offset: Optional[Tuple[int, int]] = None,
) -> Batch:
    """
    Apply an augmentation policy.

    ``pad4-crop-flip`` zero-pads by 4, crops back to the original extent at
    a random offset and mirrors horizontally with probability 1/2. Labels
    are never touched.

    Parameters
    ----------
    batch : Batch
        Input batch
    policy : Union[str, AugmentPolicy]
        ``none`` or ``pad4-crop-flip``
    rng : RandomGenerator
        Source of offsets and flips
    force_flip : Optional[bool]
        Test hook: flip every image (True) or none (False)
    force_offset : Optional[Tuple[int, int]]
        Test hook: crop offset for every image; ``(4, 4)`` is the identity crop
    """
    policy = AugmentPolicy(policy)
    if policy is AugmentPolicy.NONE:
        return batch
    images = batch.images.data
    count, _, height, width = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    if force_offset is None:
        offsets = rng.integers(0, 2 * PAD + 1, size=(count, 2))
    else:
        offsets = np.tile(np.asarray(force_offset), (count, 1))
    flips = rng.bernoulli(0.5, count) if force_flip is None else np.full(count, force_flip)
    out = np.empty_like(images)
    for i in range(count):
        dy, dx = int(offsets[i, 0]), int(offsets[i, 1])
        crop = padded[i, :, dy : dy + height, dx : dx + width]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return Batch(Tensor.wrap(out), batch.labels, batch.indices)
