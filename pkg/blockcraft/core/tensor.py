"""
Dense tensor values for the training engine.

A :class:`Tensor` is an immutable, row-major numpy array with a validated
shape. Precision is a run-level switch: 64-bit for gradient verification,
32-bit for training throughput.

Reproducibility holds per platform. Matrix products go through
``np.matmul``, which hands them to the BLAS numpy was built against. One
build on one machine with a fixed thread count returns identical bits for
identical inputs, and the sequential and pipelined executors rely on that.
Another BLAS build (OpenBLAS against MKL, say) may sum in another order,
so results can differ in the last bits across machines.
"""

from __future__ import annotations
import contextlib
import logging
from enum import Enum
from typing import Any, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from blockcraft.errors import NonFiniteError, ShapeError

logger = logging.getLogger("blockcraft.tensor")

Axes = Union[None, int, Sequence[int]]


class Precision(Enum):
    """Supported floating precisions."""

    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        """Numpy dtype for this precision."""
        return np.dtype(self.value)


_default_precision = Precision.FLOAT32
_debug_checks = False


def get_precision() -> Precision:
    """Get the run-level default precision."""
    return _default_precision


def set_precision(value: Union[str, Precision]) -> Precision:
    """
    Set the run-level default precision.

    Parameters
    ----------
    value : Union[str, Precision]
        ``"float32"`` or ``"float64"``

    Returns
    -------
    Precision
        The previous precision
    """
    global _default_precision
    previous = _default_precision
    _default_precision = Precision(value)
    logger.debug("precision set to %s", _default_precision.value)
    return previous


@contextlib.contextmanager
def precision(value: Union[str, Precision]) -> Iterator[Precision]:
    """
    Temporarily switch the default precision.

    Examples
    --------
    >>> with precision("float64"):
    ...     t = Tensor([1, 2, 3])
    >>> t.dtype
    dtype('float64')
    """
    previous = set_precision(value)
    try:
        yield _default_precision
    finally:
        set_precision(previous)


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf detection on every tensor construction."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """
    Immutable dense n-dimensional array.

    Floating inputs keep their dtype; integer or Python inputs are converted
    to the current default precision. The stored array is read-only, so a
    tensor can be shared freely between concurrent workers.

    Parameters
    ----------
    data : Any
        Array-like values (copied)
    dtype : Optional[Any]
        Explicit dtype, overriding the default rules

    Examples
    --------
    >>> t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    >>> t.shape
    (2, 2)
    >>> float(reduce("sum", t))
    10.0
    """

    __slots__ = ("_data",)

    def __init__(self, data: Any, dtype: Optional[Any] = None) -> None:
        """Initialize tensor from a copy of ``data``."""
        if isinstance(data, Tensor):
            data = data._data
        if dtype is None:
            raw = np.asarray(data)
            if raw.dtype.kind == "f":
                dtype = raw.dtype
            else:
                dtype = _default_precision.dtype
        array = np.array(data, dtype=dtype, copy=True)
        self._data = self._seal(array)

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """
        Adopt a freshly computed array without copying.

        The caller gives up ownership: the array becomes read-only.
        """
        tensor = cls.__new__(cls)
        tensor._data = cls._seal(np.ascontiguousarray(array))
        return tensor

    @staticmethod
    def _seal(array: np.ndarray) -> np.ndarray:
        """Validate and freeze the backing array."""
        if any(extent < 0 for extent in array.shape):
            raise ShapeError(f"negative extent in shape {array.shape}")
        if array.size != int(np.prod(array.shape, dtype=np.int64)):
            raise ShapeError(
                f"data length {array.size} does not match shape {array.shape}"
            )
        if _debug_checks and array.dtype.kind == "f" and not np.all(np.isfinite(array)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(array))[0])
            raise NonFiniteError("non-finite tensor value", location=f"index {bad}")
        array.flags.writeable = False
        return array

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype: Optional[Any] = None) -> "Tensor":
        """Tensor of zeros."""
        return cls.wrap(np.zeros(tuple(shape), dtype=dtype or _default_precision.dtype))

    @classmethod
    def full(
        cls, shape: Sequence[int], value: float, dtype: Optional[Any] = None
    ) -> "Tensor":
        """Tensor filled with a constant."""
        return cls.wrap(
            np.full(tuple(shape), value, dtype=dtype or _default_precision.dtype)
        )

    @classmethod
    def eye(cls, n: int, dtype: Optional[Any] = None) -> "Tensor":
        """Identity matrix."""
        return cls.wrap(np.eye(n, dtype=dtype or _default_precision.dtype))

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values."""
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        """Extents per dimension."""
        return self._data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self._data.ndim

    @property
    def size(self) -> int:
        """Total number of values."""
        return self._data.size

    @property
    def dtype(self) -> np.dtype:
        """Value dtype."""
        return self._data.dtype

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return self._data.copy()

    def item(self) -> float:
        """Scalar value of a single-element tensor."""
        if self._data.size != 1:
            raise ShapeError(f"item() needs exactly one value, shape is {self.shape}")
        return self._data.reshape(-1)[0].item()

    def bitwise_equal(self, other: "Tensor") -> bool:
        """Check identical shape, dtype and bit pattern."""
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self._data.tobytes() == other._data.tobytes()
        )

    def __array__(self, dtype: Optional[Any] = None, copy: Optional[bool] = None) -> np.ndarray:
        """Support ``np.asarray(tensor)``."""
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __float__(self) -> float:
        """Convert a single-element tensor to float."""
        return float(self.item())

    def __len__(self) -> int:
        """Leading extent."""
        return self.shape[0] if self.shape else 1

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class ElementwiseOp(Enum):
    """Pointwise operations."""

    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALE = "scale"
    RELU = "relu-forward"


class ReduceOp(Enum):
    """Reduction operations."""

    SUM = "sum"
    MEAN = "mean"
    MAX = "max"


def as_array(value: Union[Tensor, np.ndarray, float]) -> np.ndarray:
    """Backing array of a tensor, or ``np.asarray`` of anything else."""
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of ``a[m, k]`` and ``b[k, n]``.

    Raises
    ------
    ShapeError
        If either operand is not 2-D or the inner extents differ
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner extents differ: {a.shape} x {b.shape} "
            f"({a.shape[1]} != {b.shape[0]})"
        )
    return Tensor.wrap(np.matmul(a.data, b.data))


def elementwise(
    op: Union[str, ElementwiseOp],
    a: Tensor,
    b: Optional[Tensor] = None,
    factor: Optional[float] = None,
) -> Tensor:
    """
    Apply a pointwise operation.

    Parameters
    ----------
    op : Union[str, ElementwiseOp]
        add, sub, mul (binary, equal shapes), scale (needs ``factor``) or
        relu-forward (unary)
    a : Tensor
        First operand
    b : Optional[Tensor]
        Second operand for binary operations
    factor : Optional[float]
        Scalar for ``scale``

    Returns
    -------
    Tensor
        Result with the shape of ``a``
    """
    op = ElementwiseOp(op)
    if op in (ElementwiseOp.ADD, ElementwiseOp.SUB, ElementwiseOp.MUL):
        if b is None:
            raise ShapeError(f"{op.value} needs two operands")
        if a.shape != b.shape:
            raise ShapeError(f"{op.value} shape mismatch: {a.shape} vs {b.shape}")
        if op is ElementwiseOp.ADD:
            return Tensor.wrap(a.data + b.data)
        if op is ElementwiseOp.SUB:
            return Tensor.wrap(a.data - b.data)
        return Tensor.wrap(a.data * b.data)
    if op is ElementwiseOp.SCALE:
        if factor is None:
            raise ValueError("scale needs a factor")
        return Tensor.wrap(a.data * a.dtype.type(factor))
    return Tensor.wrap(np.maximum(a.data, a.dtype.type(0)))


def normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    """
    Resolve reduction axes to sorted non-negative indices.

    Raises
    ------
    ShapeError
        If an axis is out of range or repeated
    """
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    resolved = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} out of range for {ndim}-D tensor")
        resolved.append(axis % ndim)
    if len(set(resolved)) != len(resolved):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(resolved))


def reduce(
    op: Union[str, ReduceOp],
    a: Tensor,
    axes: Axes = None,
    keepdims: bool = False,
) -> Tensor:
    """
    Reduce over the given axes.

    The accumulation order is a fixed function of shape and layout, so
    repeated evaluation is bitwise identical.

    Raises
    ------
    ShapeError
        On invalid axes, or ``max``/``mean`` over an empty extent
    """
    op = ReduceOp(op)
    resolved = normalize_axes(axes, a.ndim)
    if op is not ReduceOp.SUM and any(a.shape[ax] == 0 for ax in resolved):
        raise ShapeError(f"{op.value} over empty extent in shape {a.shape}")
    if op is ReduceOp.SUM:
        out = np.sum(a.data, axis=resolved, keepdims=keepdims)
    elif op is ReduceOp.MEAN:
        out = np.mean(a.data, axis=resolved, keepdims=keepdims)
    else:
        out = np.max(a.data, axis=resolved, keepdims=keepdims)
    return Tensor.wrap(np.asarray(out, dtype=a.dtype))


def check_finite(value: Union[Tensor, np.ndarray], where: str) -> None:
    """
    Raise if any value is NaN or Inf.

    Parameters
    ----------
    value : Union[Tensor, np.ndarray]
        Values to inspect
    where : str
        Location reported in the error
    """
    array = as_array(value)
    if array.dtype.kind == "f" and not np.all(np.isfinite(array)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(array))[0])
        raise NonFiniteError("non-finite value", location=f"{where}{list(bad)}")
