"""
Reverse-mode automatic differentiation over an append-only tape.

A :class:`Tape` records every differentiable operation as a :class:`Node`
holding its parents and a backward rule. :func:`backward` replays the tape
in reverse. :func:`detach` produces a constant leaf: values cross, gradient
does not. Each block of a decoupled model records onto its own tape, so the
inter-block gradient path simply does not exist.

Example
-------
>>> tape = Tape("demo")
>>> x = tape.watch(Tensor([3.0]), name="x")
>>> loss = sum_(x * x)
>>> grads = backward(tape, loss)
>>> grads[x.node_id].data
array([6.])
"""

from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from blockcraft.core.tensor import (
    Axes,
    Tensor,
    elementwise,
    matmul as tensor_matmul,
    normalize_axes,
    reduce,
)
from blockcraft.errors import ShapeError, TapeError

logger = logging.getLogger("blockcraft.autodiff")

# Maps the output gradient to one gradient (or None) per input.
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    """
    One recorded operation.

    Attributes
    ----------
    kind : str
        Operation name (``"leaf"`` for watched values)
    parents : Tuple[Optional[int], ...]
        Node id per input, ``None`` for constant inputs
    backward : Optional[BackwardRule]
        Gradient rule, absent for leaves
    shape : Tuple[int, ...]
        Shape of the recorded value
    name : Optional[str]
        Leaf name, if any
    """

    kind: str
    parents: Tuple[Optional[int], ...]
    backward: Optional[BackwardRule]
    shape: Tuple[int, ...]
    name: Optional[str] = None


class Variable:
    """
    Value with optional gradient provenance.

    A Variable without a node id is a constant: it neither receives nor
    propagates gradient.

    Parameters
    ----------
    value : Tensor
        Forward value
    node_id : Optional[int]
        Index on ``tape``; ``None`` for constants
    tape : Optional[Tape]
        Owning tape
    name : Optional[str]
        Display name
    """

    __slots__ = ("value", "node_id", "tape", "name")

    def __init__(
        self,
        value: Tensor,
        node_id: Optional[int] = None,
        tape: Optional["Tape"] = None,
        name: Optional[str] = None,
    ) -> None:
        """Initialize variable."""
        if (node_id is None) != (tape is None):
            raise TapeError("node_id and tape must be given together")
        self.value = value
        self.node_id = node_id
        self.tape = tape
        self.name = name

    @classmethod
    def constant(cls, value: Union[Tensor, np.ndarray], name: Optional[str] = None) -> "Variable":
        """Constant leaf."""
        if not isinstance(value, Tensor):
            value = Tensor(value)
        return cls(value, name=name)

    @property
    def requires_grad(self) -> bool:
        """Whether gradient can reach this variable."""
        return self.node_id is not None

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the value."""
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        """Read-only values."""
        return self.value.data

    def __add__(self, other: "Variable") -> "Variable":
        return add(self, _as_variable(other))

    def __sub__(self, other: "Variable") -> "Variable":
        return sub(self, _as_variable(other))

    def __mul__(self, other: Union["Variable", float]) -> "Variable":
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_variable(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Variable":
        return scale(self, -1.0)

    def __matmul__(self, other: "Variable") -> "Variable":
        return matmul(self, _as_variable(other))

    def __repr__(self) -> str:
        """Return detailed representation."""
        where = f"node={self.node_id}" if self.node_id is not None else "constant"
        return f"Variable(shape={self.shape}, {where}, name={self.name!r})"


def _as_variable(value: Union[Variable, Tensor, np.ndarray]) -> Variable:
    if isinstance(value, Variable):
        return value
    return Variable.constant(value)


class Tape:
    """
    Append-only record of differentiable operations.

    A tape is single-owner while recording and during backward. Node ids
    are list indices, so every parent precedes its child.

    Parameters
    ----------
    name : str
        Tape name (e.g. ``"block2"``)
    """

    def __init__(self, name: str = "") -> None:
        """Initialize tape."""
        self.name = name
        self._nodes: List[Node] = []
        self._leaves: Dict[str, int] = {}

    @property
    def nodes(self) -> List[Node]:
        """Recorded nodes in topological order."""
        return self._nodes

    def watch(self, value: Tensor, name: Optional[str] = None) -> Variable:
        """
        Register a gradient leaf.

        Parameters
        ----------
        value : Tensor
            Leaf value (typically a parameter)
        name : Optional[str]
            Name under which :meth:`parameter_gradients` reports it

        Raises
        ------
        TapeError
            If ``name`` is already watched on this tape
        """
        if name is not None and name in self._leaves:
            raise TapeError(f"'{name}' already watched on tape '{self.name}'")
        node_id = self._append(Node("leaf", (), None, value.shape, name))
        if name is not None:
            self._leaves[name] = node_id
        return Variable(value, node_id, self, name)

    def record(
        self,
        kind: str,
        value: Tensor,
        parents: Sequence[Optional[int]],
        backward: BackwardRule,
    ) -> Variable:
        """Append an operation node and return its output variable."""
        for parent in parents:
            if parent is not None and not 0 <= parent < len(self._nodes):
                raise TapeError(f"parent {parent} not on tape '{self.name}'")
        node_id = self._append(Node(kind, tuple(parents), backward, value.shape))
        return Variable(value, node_id, self)

    def _append(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def parameter_gradients(self, grads: Dict[int, Tensor]) -> Dict[str, Tensor]:
        """
        Gradients of watched leaves, keyed by leaf name.

        Leaves that received no gradient are absent.
        """
        return {
            name: grads[node_id]
            for name, node_id in self._leaves.items()
            if node_id in grads
        }

    def __len__(self) -> int:
        return len(self._nodes)

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"Tape(name={self.name!r}, nodes={len(self._nodes)})"


def record_op(
    kind: str,
    value: Tensor,
    inputs: Sequence[Variable],
    backward: BackwardRule,
) -> Variable:
    """
    Record ``value = kind(*inputs)`` on the inputs' tape.

    If no input requires gradient the result is a constant and nothing is
    recorded.

    Raises
    ------
    TapeError
        If the inputs live on different tapes
    """
    tape: Optional[Tape] = None
    for var in inputs:
        if var.tape is None:
            continue
        if tape is None:
            tape = var.tape
        elif var.tape is not tape:
            raise TapeError(
                f"{kind}: inputs from different tapes "
                f"('{tape.name}' and '{var.tape.name}')"
            )
    if tape is None:
        return Variable(value)
    return tape.record(kind, value, [var.node_id for var in inputs], backward)


def backward(tape: Tape, loss: Variable) -> Dict[int, Tensor]:
    """
    Gradients of a scalar loss with respect to every reachable node.

    Parameters
    ----------
    tape : Tape
        Tape holding the loss
    loss : Variable
        Scalar output recorded on ``tape``

    Returns
    -------
    Dict[int, Tensor]
        Node id to gradient; unreachable and constant nodes are absent

    Raises
    ------
    TapeError
        If the loss is not scalar or not recorded on ``tape``
    """
    if loss.tape is not tape or loss.node_id is None:
        raise TapeError(f"loss is not recorded on tape '{tape.name}'")
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {
        loss.node_id: np.ones(loss.shape, dtype=loss.value.dtype)
    }
    for node_id in range(loss.node_id, -1, -1):
        grad = grads.get(node_id)
        if grad is None:
            continue
        node = tape.nodes[node_id]
        if node.backward is None:
            continue
        parent_grads = node.backward(grad)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if parent is None or parent_grad is None:
                continue
            expected = tape.nodes[parent].shape
            if parent_grad.shape != expected:
                raise TapeError(
                    f"{node.kind}: gradient shape {parent_grad.shape} "
                    f"!= value shape {expected}"
                )
            if parent in grads:
                grads[parent] = grads[parent] + parent_grad
            else:
                grads[parent] = parent_grad
    return {node_id: Tensor.wrap(grad) for node_id, grad in grads.items()}


def detach(var: Variable) -> Variable:
    """
    Stop-gradient: same value object, no node.

    ``detach(detach(v))`` returns its argument unchanged.
    """
    if var.node_id is None:
        return var
    return Variable(var.value, name=var.name)


# Differentiable primitives


def add(a: Variable, b: Variable) -> Variable:
    """Elementwise sum of equal-shaped variables."""
    value = elementwise("add", a.value, b.value)
    return record_op("add", value, (a, b), lambda g: (g, g))


def sub(a: Variable, b: Variable) -> Variable:
    """Elementwise difference of equal-shaped variables."""
    value = elementwise("sub", a.value, b.value)
    return record_op("sub", value, (a, b), lambda g: (g, -g))


def mul(a: Variable, b: Variable) -> Variable:
    """Elementwise product of equal-shaped variables."""
    value = elementwise("mul", a.value, b.value)
    av, bv = a.data, b.data
    return record_op("mul", value, (a, b), lambda g: (g * bv, g * av))


def scale(a: Variable, factor: float) -> Variable:
    """Multiply by a scalar constant."""
    value = elementwise("scale", a.value, factor=factor)
    c = a.value.dtype.type(factor)
    return record_op("scale", value, (a,), lambda g: (g * c,))


def matmul(a: Variable, b: Variable) -> Variable:
    """Matrix product ``a[m, k] @ b[k, n]``."""
    value = tensor_matmul(a.value, b.value)
    av, bv = a.data, b.data
    return record_op("matmul", value, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(a: Variable) -> Variable:
    """Rectified linear unit; the gradient at exactly zero is zero."""
    value = elementwise("relu-forward", a.value)
    mask = a.data > 0
    return record_op("relu", value, (a,), lambda g: (np.where(mask, g, 0).astype(g.dtype),))


def sum_(a: Variable, axes: Axes = None) -> Variable:
    """Sum over ``axes`` (all by default)."""
    resolved = normalize_axes(axes, a.value.ndim)
    value = reduce("sum", a.value, resolved)
    shape = a.shape

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.broadcast_to(np.expand_dims(g, resolved), shape).copy(),)

    return record_op("sum", value, (a,), rule)


def mean(a: Variable, axes: Axes = None) -> Variable:
    """Mean over ``axes`` (all by default)."""
    resolved = normalize_axes(axes, a.value.ndim)
    value = reduce("mean", a.value, resolved)
    shape = a.shape
    count = int(np.prod([shape[ax] for ax in resolved], dtype=np.int64))

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        spread = np.broadcast_to(np.expand_dims(g, resolved), shape)
        return ((spread / g.dtype.type(count)).astype(g.dtype),)

    return record_op("mean", value, (a,), rule)


def reshape(a: Variable, shape: Sequence[int]) -> Variable:
    """Reshape preserving row-major order."""
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    original = a.shape
    return record_op("reshape", Tensor.wrap(out), (a,), lambda g: (g.reshape(original),))
