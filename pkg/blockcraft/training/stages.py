"""
Per-stage training logic shared by the sequential trainer and the pipeline.

A :class:`BlockStage` owns one block, its head and their momentum buffers;
an :class:`OutputStage` owns the classifier. Both expose the same
two-phase protocol: ``forward`` yields the detached activation to emit
downstream, ``update`` then applies the local step. Because the sequential
trainer and every pipeline worker run exactly this code in this order,
the two execution modes produce bitwise identical parameters.
"""

from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from blockcraft.core.autodiff import Tape, Variable, backward, detach
from blockcraft.core.tensor import Tensor
from blockcraft.models.network import ClassifierTap, DecoupledModel, LossWeights
from blockcraft.nn.functional import softmax_cross_entropy
from blockcraft.nn.layers import Parameter, ParameterBinding
from blockcraft.training.optimizer import SgdConfig, sgd_update

logger = logging.getLogger("blockcraft.trainer")


@dataclass
class BlockForward:
    """Forward result of one block on one batch."""

    batch_id: int
    tape: Tape
    bind: ParameterBinding
    output: Variable
    emitted: Tensor


@dataclass(frozen=True)
class ClassifierSnapshot:
    """By-value copy of the output layer after one update."""

    batch_id: int
    weight: Tensor
    bias: Tensor


@dataclass(frozen=True)
class OutputResult:
    """Outcome of one output-layer step."""

    batch_id: int
    loss: float
    errors: int
    count: int
    snapshot: ClassifierSnapshot


def apply_gradients(
    params: Sequence[Parameter],
    grads: Dict[str, Tensor],
    velocities: Dict[str, Tensor],
    cfg: SgdConfig,
    lr: float,
) -> None:
    """
    SGD step for every parameter in ``params``.

    A parameter missing from ``grads`` is stepped with a zero gradient.
    """
    for param in params:
        grad = grads.get(param.name)
        if grad is None:
            grad = Tensor.zeros(param.shape, dtype=param.value.dtype)
        param.value, velocities[param.name] = sgd_update(
            param.value, grad, velocities.get(param.name), cfg, lr, param.name
        )


def scale_gradients(grads: Dict[str, Tensor], factor: float) -> Dict[str, Tensor]:
    """Multiply every gradient by a loss weight."""
    return {
        name: Tensor.wrap(g.data * g.dtype.type(factor)) for name, g in grads.items()
    }


class BlockStage:
    """
    Training stage for block ``index`` and its local head.

    Parameters
    ----------
    model : DecoupledModel
        Model holding the block
    index : int
        0-based block index
    weights : LossWeights
        Loss weights; only ``lambda2`` is used here
    cfg : SgdConfig
        Optimizer settings
    velocities : Dict[str, Tensor]
        Momentum buffers, updated in place for owned parameters
    tap : Optional[ClassifierTap]
        Local head of the last block (defaults to the model's tap)
    """

    def __init__(
        self,
        model: DecoupledModel,
        index: int,
        weights: LossWeights,
        cfg: SgdConfig,
        velocities: Dict[str, Tensor],
        tap: Optional[ClassifierTap] = None,
    ) -> None:
        """Initialize stage."""
        self.index = index
        self.name = f"block{index + 1}"
        self.block = model.blocks[index]
        self.is_last = index == model.k - 1
        self.head = (tap or model.tap) if self.is_last else model.heads[index]
        self.params: List[Parameter] = model.stage_parameters(index)
        self.weight = weights.lambda2
        self.cfg = cfg
        self.velocities = velocities

    @property
    def tap(self) -> Optional[ClassifierTap]:
        """Classifier copy used by the last block."""
        return self.head if self.is_last else None

    def forward(self, batch_id: int, activation: Tensor) -> BlockForward:
        """
        Run the block on an incoming (already detached) activation.

        The returned ``emitted`` tensor is what the next stage consumes.
        """
        tape = Tape(self.name)
        bind = ParameterBinding(tape, frozen=self.weight == 0)
        out = self.block.forward(Variable.constant(activation), bind, train=True)
        return BlockForward(batch_id, tape, bind, out, detach(out).value)

    def local_loss(self, fwd: BlockForward, labels: np.ndarray) -> Variable:
        """Cross-entropy of the block's head on the batch labels."""
        logits = self.head.forward(fwd.output, fwd.bind, train=True)
        loss, _ = softmax_cross_entropy(logits, labels)
        return loss

    def gradients(self, fwd: BlockForward, loss: Variable) -> Dict[str, Tensor]:
        """``lambda2``-weighted gradients of the local loss, keyed by name."""
        grads = fwd.tape.parameter_gradients(backward(fwd.tape, loss))
        return scale_gradients(grads, self.weight)

    def update(self, fwd: BlockForward, labels: np.ndarray, lr: float) -> float:
        """
        Local loss, backward and SGD step for one batch.

        With ``lambda2 == 0`` no gradient is taken and nothing moves.

        Returns
        -------
        float
            Unweighted local loss
        """
        loss = self.local_loss(fwd, labels)
        if self.weight > 0:
            apply_gradients(self.params, self.gradients(fwd, loss), self.velocities, self.cfg, lr)
        return float(loss.value.item())

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"BlockStage(name={self.name!r}, params={len(self.params)})"


class OutputStage:
    """
    Training stage for the output layer.

    Its input is the detached activation of the last block, so the global
    loss reaches the classifier and nothing else.
    """

    name = "classifier"

    def __init__(
        self,
        model: DecoupledModel,
        weights: LossWeights,
        cfg: SgdConfig,
        velocities: Dict[str, Tensor],
    ) -> None:
        """Initialize stage."""
        self.classifier = model.classifier
        self.params: List[Parameter] = model.stage_parameters(model.k)
        self.weight = weights.lambda1
        self.cfg = cfg
        self.velocities = velocities

    def step(self, batch_id: int, activation: Tensor, labels: np.ndarray, lr: float) -> OutputResult:
        """Global loss, batch error and SGD step on one batch."""
        tape = Tape(self.name)
        bind = ParameterBinding(tape, frozen=self.weight == 0)
        logits = self.classifier.forward(Variable.constant(activation), bind, train=True)
        loss, probs = softmax_cross_entropy(logits, labels)
        errors = int(np.count_nonzero(np.argmax(probs.data, axis=1) != labels))
        if self.weight > 0:
            grads = tape.parameter_gradients(backward(tape, loss))
            apply_gradients(
                self.params, scale_gradients(grads, self.weight), self.velocities, self.cfg, lr
            )
        snapshot = ClassifierSnapshot(
            batch_id, self.classifier.dense.weight.value, self.classifier.dense.bias.value
        )
        return OutputResult(batch_id, float(loss.value.item()), errors, len(labels), snapshot)


def build_stages(
    model: DecoupledModel,
    weights: LossWeights,
    cfg: SgdConfig,
    velocities: Dict[str, Tensor],
) -> Tuple[List[BlockStage], OutputStage]:
    """All K block stages plus the output stage, sharing one velocity map."""
    blocks = [BlockStage(model, i, weights, cfg, velocities) for i in range(model.k)]
    return blocks, OutputStage(model, weights, cfg, velocities)
