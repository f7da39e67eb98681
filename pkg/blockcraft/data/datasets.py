"""
Datasets and the on-disk formats they are read from.

CIFAR-10 binary batches hold 3073-byte records: one label byte followed by
3072 channel-major pixel bytes. MNIST IDX files hold a big-endian magic
number, big-endian extents and raw unsigned bytes. Images are scaled to
[0, 1] and standardized per channel with train-split statistics.
"""

from __future__ import annotations
import gzip
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from blockcraft.core.tensor import Tensor, get_precision
from blockcraft.errors import DataFormatError, EmptyInputError, LabelError
from blockcraft.random.distributions import RandomGenerator
from blockcraft.random.streams import derive_seed_sequence

logger = logging.getLogger("blockcraft.data")

PathLike = Union[str, Path]

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    """
    Standardized images with class labels.

    Attributes
    ----------
    images : Tensor
        ``[S, C, H, W]`` standardized values
    labels : np.ndarray
        ``S`` class indices
    num_classes : int
        Class count N
    split : str
        ``"train"`` or ``"test"``
    mean : Tuple[float, ...]
        Per-channel mean subtracted (of [0, 1] pixels)
    std : Tuple[float, ...]
        Per-channel divisor
    name : str
        Source dataset name
    """

    images: Tensor
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    mean: Tuple[float, ...] = ()
    std: Tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be [S, C, H, W], got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelError(f"labels outside [0, {self.num_classes})")
        channels = self.images.shape[1]
        if not self.mean:
            self.mean = (0.0,) * channels
        if not self.std:
            self.std = (1.0,) * channels

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        """``(C, H, W)`` of one image."""
        return tuple(self.images.shape[1:])

    def subset(self, n: Optional[int]) -> "Dataset":
        """Leading ``n`` samples (all if ``n`` is None or too large)."""
        if n is None or n >= len(self):
            return self
        if n < 1:
            raise EmptyInputError(f"subset size must be positive, got {n}")
        return Dataset(
            Tensor.wrap(self.images.data[:n]),
            self.labels[:n],
            self.num_classes,
            self.split,
            self.mean,
            self.std,
            self.name,
        )

    def to_uint8(self) -> np.ndarray:
        """Undo standardization and scaling back to raw pixel bytes."""
        mean = np.asarray(self.mean, dtype=np.float64)[None, :, None, None]
        std = np.asarray(self.std, dtype=np.float64)[None, :, None, None]
        pixels = (self.images.data.astype(np.float64) * std + mean) * 255.0
        return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

    def __repr__(self) -> str:
        """Return detailed representation."""
        return (
            f"Dataset(name={self.name!r}, split={self.split!r}, size={len(self)}, "
            f"shape={self.sample_shape}, classes={self.num_classes})"
        )


def channel_stats(raw: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """Per-channel mean and std of ``raw / 255`` over ``[S, C, H, W]`` bytes."""
    if raw.shape[0] == 0:
        raise EmptyInputError("cannot compute statistics of an empty split")
    scaled = raw.astype(np.float64) / 255.0
    mean = scaled.mean(axis=(0, 2, 3))
    std = scaled.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return tuple(float(m) for m in mean), tuple(float(s) for s in std)


def standardize(
    raw: np.ndarray, mean: Sequence[float], std: Sequence[float], dtype: Optional[object] = None
) -> Tensor:
    """``(raw / 255 - mean) / std`` per channel, in the default precision."""
    dtype = dtype or get_precision().dtype
    m = np.asarray(mean, dtype=np.float64)[None, :, None, None]
    s = np.asarray(std, dtype=np.float64)[None, :, None, None]
    values = (raw.astype(np.float64) / 255.0 - m) / s
    return Tensor.wrap(values.astype(dtype))


def _split_pair(
    name: str,
    train_raw: np.ndarray,
    train_labels: np.ndarray,
    test_raw: np.ndarray,
    test_labels: np.ndarray,
    num_classes: int,
) -> Tuple[Dataset, Dataset]:
    mean, std = channel_stats(train_raw)
    train = Dataset(standardize(train_raw, mean, std), train_labels, num_classes, "train", mean, std, name)
    test = Dataset(standardize(test_raw, mean, std), test_labels, num_classes, "test", mean, std, name)
    logger.info(
        "loaded %s: train=%d test=%d mean=%s std=%s",
        name, len(train), len(test),
        [round(v, 4) for v in mean], [round(v, 4) for v in std],
    )
    return train, test


# CIFAR-10


def read_cifar10_file(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decode one CIFAR-10 binary batch.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        Pixels ``[n, 3, 32, 32]`` (uint8) and labels ``[n]`` (uint8)

    Raises
    ------
    DataFormatError
        If the file is missing, truncated mid-record or holds a label > 9
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError("missing CIFAR-10 file", path=str(path))
    blob = path.read_bytes()
    full, rest = divmod(len(blob), CIFAR_RECORD)
    if rest:
        raise DataFormatError(
            f"corrupt CIFAR-10 file: {len(blob)} bytes is not a multiple of {CIFAR_RECORD}, "
            f"record {full} truncated",
            path=str(path),
            offset=full * CIFAR_RECORD,
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(full, CIFAR_RECORD)
    labels = records[:, 0].copy()
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataFormatError(
            f"corrupt CIFAR-10 file: label byte {int(labels[bad[0]])} outside 0..9",
            path=str(path),
            offset=int(bad[0]) * CIFAR_RECORD,
        )
    images = records[:, 1:].reshape(full, *CIFAR_SHAPE).copy()
    return images, labels


def encode_cifar10_records(images: np.ndarray, labels: Sequence[int]) -> bytes:
    """Encode ``[n, 3, 32, 32]`` uint8 pixels and labels as CIFAR-10 records."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.shape[1:] != CIFAR_SHAPE or images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"cannot encode images {images.shape} with labels {labels.shape}")
    records = np.concatenate([labels[:, None], images.reshape(len(labels), -1)], axis=1)
    return records.tobytes()


def _cifar_dir(directory: Path) -> Path:
    nested = directory / "cifar-10-batches-bin"
    return nested if nested.is_dir() else directory


def _read_cifar_files(directory: Path, names: Iterable[str]) -> Tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for name in names:
        i, l = read_cifar10_file(directory / name)
        images.append(i)
        labels.append(l)
    return np.concatenate(images), np.concatenate(labels)


def load_cifar10(directory: PathLike) -> Tuple[Dataset, Dataset]:
    """
    Load CIFAR-10 from its binary batches.

    Parameters
    ----------
    directory : PathLike
        Folder holding ``data_batch_1.bin`` .. ``data_batch_5.bin`` and
        ``test_batch.bin`` (or a ``cifar-10-batches-bin`` folder inside it)

    Returns
    -------
    Tuple[Dataset, Dataset]
        Train (50,000) and test (10,000) splits, ``[S, 3, 32, 32]``, N=10
    """
    directory = _cifar_dir(Path(directory))
    train_raw, train_labels = _read_cifar_files(directory, CIFAR_TRAIN_FILES)
    test_raw, test_labels = _read_cifar_files(directory, CIFAR_TEST_FILES)
    return _split_pair("cifar10", train_raw, train_labels, test_raw, test_labels, 10)


# MNIST IDX


def _open_idx(directory: Path, name: str) -> Path:
    candidates = [name, name.replace("-idx", ".idx")]
    for candidate in candidates:
        for suffix in ("", ".gz"):
            path = directory / f"{candidate}{suffix}"
            if path.is_file():
                return path
    raise DataFormatError("missing IDX file", path=str(directory / name))


def read_idx(path: PathLike, expected_magic: Optional[int] = None) -> np.ndarray:
    """
    Decode an unsigned-byte IDX file (gzip accepted).

    Raises
    ------
    DataFormatError
        On a magic mismatch, a short header or a payload whose size
        disagrees with the declared extents
    """
    path = Path(path)
    blob = gzip.decompress(path.read_bytes()) if path.suffix == ".gz" else path.read_bytes()
    if len(blob) < 4:
        raise DataFormatError("IDX header too short", path=str(path), offset=len(blob))
    (magic,) = struct.unpack(">I", blob[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(
            f"IDX magic 0x{magic:08x} != expected 0x{expected_magic:08x}",
            path=str(path),
            offset=0,
        )
    if magic >> 8 != 0x08:
        raise DataFormatError(f"IDX magic 0x{magic:08x} is not unsigned-byte data", path=str(path), offset=0)
    dims = magic & 0xFF
    header = 4 + 4 * dims
    if len(blob) < header:
        raise DataFormatError("IDX extents truncated", path=str(path), offset=len(blob))
    shape = struct.unpack(f">{dims}I", blob[4:header])
    expected = int(np.prod(shape, dtype=np.int64))
    if len(blob) - header != expected:
        raise DataFormatError(
            f"IDX payload holds {len(blob) - header} bytes, extents {shape} need {expected}",
            path=str(path),
            offset=header + min(expected, len(blob) - header),
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(shape).copy()


def encode_idx(array: np.ndarray) -> bytes:
    """Encode a uint8 array as IDX bytes."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def _read_mnist_split(directory: Path, split: str) -> Tuple[np.ndarray, np.ndarray]:
    image_name, label_name = MNIST_FILES[split]
    image_path = _open_idx(directory, image_name)
    label_path = _open_idx(directory, label_name)
    images = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", path=str(label_path)
        )
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"label {int(labels.max())} outside 0..9", path=str(label_path))
    return images[:, None, :, :], labels


def load_mnist(directory: PathLike) -> Tuple[Dataset, Dataset]:
    """
    Load MNIST from IDX files.

    Returns
    -------
    Tuple[Dataset, Dataset]
        Train and test splits, ``[S, 1, 28, 28]``, N=10
    """
    directory = Path(directory)
    train_raw, train_labels = _read_mnist_split(directory, "train")
    test_raw, test_labels = _read_mnist_split(directory, "test")
    return _split_pair("mnist", train_raw, train_labels, test_raw, test_labels, 10)


# Synthetic


def synthetic(
    classes: int,
    per_class: int,
    shape: Sequence[int],
    seed: int = 0,
    margin: float = 10.0,
    split: str = "train",
) -> Dataset:
    """
    Class-conditional Gaussian blobs.

    Class centers sit ``margin`` noise standard deviations apart; splits
    drawn with the same seed share centers and differ in noise.

    Parameters
    ----------
    classes : int
        Class count (at least 2)
    per_class : int
        Samples per class
    shape : Sequence[int]
        ``(C, H, W)`` of one sample
    seed : int
        Determines centers and noise
    margin : float
        Center separation in noise standard deviations
    split : str
        Split tag; also selects the noise stream

    Examples
    --------
    >>> data = synthetic(2, 50, (1, 4, 4), seed=3)
    >>> len(data), data.num_classes
    (100, 2)
    """
    if classes < 2:
        raise EmptyInputError(f"synthetic data needs at least 2 classes, got {classes}")
    if per_class < 1:
        raise EmptyInputError(f"per_class must be positive, got {per_class}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise EmptyInputError(f"shape must be three positive extents, got {shape}")
    features = int(np.prod(shape))
    dtype = get_precision().dtype

    center_rng = RandomGenerator.from_seed_sequence(derive_seed_sequence(seed, "centers"))
    if classes <= features:
        axes = center_rng.permutation(features)[:classes]
        centers = np.zeros((classes, features))
        centers[np.arange(classes), axes] = margin / math.sqrt(2.0)
    else:
        directions = center_rng.generator.normal(size=(classes, features))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        centers = directions * margin

    noise_rng = RandomGenerator.from_seed_sequence(derive_seed_sequence(seed, "noise", split))
    labels = np.repeat(np.arange(classes), per_class)
    order = noise_rng.permutation(labels.size)
    labels = labels[order]
    noise = noise_rng.generator.normal(size=(labels.size, features))
    values = (centers[labels] + noise).reshape(labels.size, *shape).astype(dtype)
    return Dataset(Tensor.wrap(values), labels, classes, split, name="synthetic")


def synthetic_pair(
    classes: int,
    per_class: int,
    shape: Sequence[int],
    seed: int = 0,
    margin: float = 10.0,
    test_per_class: Optional[int] = None,
) -> Tuple[Dataset, Dataset]:
    """Train and test synthetic splits sharing class centers."""
    train = synthetic(classes, per_class, shape, seed, margin, "train")
    test = synthetic(classes, test_per_class or max(1, per_class // 4), shape, seed, margin, "test")
    return train, test
