"""
Executable networks built from an :class:`ArchitectureSpec`.

A :class:`DecoupledModel` is the base network (stem, units, classifier)
cut into K blocks, plus one auxiliary head for each of blocks 1..K-1.
Block K reaches its local loss through a :class:`ClassifierTap`: a
read-only copy of the output layer's weights.

Parameter names do not depend on K (``stem.conv.weight``,
``unit3.conv1.weight``, ``head1.dense.bias``, ``classifier.dense.weight``),
so a model for any K carries the same base parameters.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np

from blockcraft.core.autodiff import Variable
from blockcraft.core.tensor import Tensor
from blockcraft.errors import ArchitectureError
from blockcraft.models.partition import BlockPartition, partition
from blockcraft.models.spec import ArchitectureSpec, StemSpec, UnitKind, UnitSpec
from blockcraft.nn import functional as F
from blockcraft.nn.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    Parameter,
    ParameterBinding,
    ReLU,
    Sequential,
)
from blockcraft.random.distributions import RandomGenerator
from blockcraft.random.streams import StreamManager

logger = logging.getLogger("blockcraft.network")

PREDICT_BATCH = 256


@dataclass(frozen=True)
class LossWeights:
    """
    Weights of the global and local loss terms.

    Attributes
    ----------
    lambda1 : float
        Weight of the output-layer loss
    lambda2 : float
        Weight of every local loss
    """

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


class VggUnit(Sequential):
    """Conv-bn-relu with an optional trailing 2x2 max-pool."""

    def __init__(self, name: str, spec: UnitSpec, rng: RandomGenerator) -> None:
        layers: List[Layer] = [
            Conv2d(f"{name}.conv", spec.in_channels, spec.out_channels, 3, rng, bias=False),
            BatchNorm2d(f"{name}.bn", spec.out_channels),
            ReLU(f"{name}.relu"),
        ]
        if spec.pool:
            layers.append(MaxPool2d(f"{name}.pool", 2))
        super().__init__(name, layers)


class ResidualUnit(Layer):
    """
    Basic or bottleneck residual unit.

    The shortcut is the identity, or an explicit 1x1 conv + batch-norm when
    stride or channel count changes.
    """

    def __init__(self, name: str, spec: UnitSpec, rng: RandomGenerator) -> None:
        super().__init__(name)
        cin, cout, stride = spec.in_channels, spec.out_channels, spec.stride
        if spec.kind is UnitKind.BASIC:
            main: List[Layer] = [
                Conv2d(f"{name}.conv1", cin, cout, 3, rng, stride=stride, padding=1, bias=False),
                BatchNorm2d(f"{name}.bn1", cout),
                ReLU(f"{name}.relu1"),
                Conv2d(f"{name}.conv2", cout, cout, 3, rng, bias=False),
                BatchNorm2d(f"{name}.bn2", cout),
            ]
        else:
            mid = spec.mid_channels
            main = [
                Conv2d(f"{name}.conv1", cin, mid, 1, rng, padding=0, bias=False),
                BatchNorm2d(f"{name}.bn1", mid),
                ReLU(f"{name}.relu1"),
                Conv2d(f"{name}.conv2", mid, mid, 3, rng, stride=stride, padding=1, bias=False),
                BatchNorm2d(f"{name}.bn2", mid),
                ReLU(f"{name}.relu2"),
                Conv2d(f"{name}.conv3", mid, cout, 1, rng, padding=0, bias=False),
                BatchNorm2d(f"{name}.bn3", cout),
            ]
        self.main = Sequential(f"{name}.main", main)
        self.shortcut: Optional[Sequential] = None
        if spec.projection:
            self.shortcut = Sequential(
                f"{name}.shortcut",
                [
                    Conv2d(f"{name}.shortcut.conv", cin, cout, 1, rng, stride=stride, padding=0, bias=False),
                    BatchNorm2d(f"{name}.shortcut.bn", cout),
                ],
            )

    def parameters(self) -> List[Parameter]:
        params = self.main.parameters()
        if self.shortcut is not None:
            params += self.shortcut.parameters()
        return params

    def batchnorms(self) -> List[BatchNorm2d]:
        norms = self.main.batchnorms()
        if self.shortcut is not None:
            norms += self.shortcut.batchnorms()
        return norms

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        out = self.main.forward(x, bind, train)
        short = self.shortcut.forward(x, bind, train) if self.shortcut is not None else x
        return F.relu(F.residual_add(out, short))


def build_unit(name: str, spec: UnitSpec, rng: RandomGenerator) -> Layer:
    """Layer for one unit spec."""
    if spec.kind is UnitKind.VGG:
        return VggUnit(name, spec, rng)
    return ResidualUnit(name, spec, rng)


def build_stem(spec: StemSpec, rng: RandomGenerator) -> Sequential:
    """Conv-bn-relu stem."""
    return Sequential(
        "stem",
        [
            Conv2d("stem.conv", spec.in_channels, spec.out_channels, spec.kernel, rng,
                   stride=spec.stride, padding=(spec.kernel - 1) // 2, bias=False),
            BatchNorm2d("stem.bn", spec.out_channels),
            ReLU("stem.relu"),
        ],
    )


class Block(Sequential):
    """
    Contiguous run of units trained as one decoupled subnetwork.

    Parameters
    ----------
    index : int
        0-based block index
    layers : List[Layer]
        Stem (block 0 only) followed by units
    """

    def __init__(self, index: int, layers: List[Layer]) -> None:
        super().__init__(f"block{index + 1}", layers)
        self.index = index

    def batchnorms(self) -> List[BatchNorm2d]:
        norms: List[BatchNorm2d] = []
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                norms.append(layer)
            elif hasattr(layer, "batchnorms"):
                norms.extend(layer.batchnorms())
        return norms


class AuxiliaryHead(Layer):
    """Global average pool followed by a dense map to class scores."""

    def __init__(self, name: str, channels: int, num_classes: int, rng: RandomGenerator) -> None:
        super().__init__(name)
        self.gap = GlobalAvgPool(f"{name}.gap")
        self.dense = Dense(f"{name}.dense", channels, num_classes, rng)

    def parameters(self) -> List[Parameter]:
        return self.dense.parameters()

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        return self.dense.forward(self.gap.forward(x, bind, train), bind, train)


class Classifier(AuxiliaryHead):
    """The output layer: global average pool plus dense."""

    def __init__(self, channels: int, num_classes: int, rng: RandomGenerator) -> None:
        super().__init__("classifier", channels, num_classes, rng)


class ClassifierTap:
    """
    Read-only copy of the output layer's weights.

    Block K computes its local loss through the tap. The copy is by value:
    later updates of the classifier are invisible until :meth:`load`.

    Parameters
    ----------
    classifier : Classifier
        Output layer to copy from
    """

    def __init__(self, classifier: Classifier) -> None:
        """Initialize tap."""
        self.weight: Tensor = classifier.dense.weight.value
        self.bias: Tensor = classifier.dense.bias.value
        self.version = 0

    def load(self, weight: Tensor, bias: Tensor, version: int) -> None:
        """Install a snapshot of the output layer."""
        self.weight = weight
        self.bias = bias
        self.version = version

    def sync(self, classifier: Classifier) -> None:
        """Copy the classifier's current weights."""
        self.load(classifier.dense.weight.value, classifier.dense.bias.value, self.version + 1)

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        pooled = F.global_avg_pool(x)
        return F.dense(pooled, Variable(self.weight), Variable(self.bias))


class DecoupledModel:
    """
    Base network split into K blocks with local heads.

    Blocks 1..K-1 train through their auxiliary heads. Block K has no head
    of its own: it trains through a ClassifierTap, a frozen copy of the
    output layer. With K=1 the single block therefore sees the classifier
    loss and its gradients coincide with end-to-end backpropagation. A
    one-block model has zero auxiliary heads and trains on the classifier
    loss alone.

    Parameters
    ----------
    spec : ArchitectureSpec
        Validated architecture
    partition : BlockPartition
        Unit-to-block assignment
    blocks : List[Block]
        K blocks in order
    heads : List[AuxiliaryHead]
        Heads for blocks 1..K-1
    classifier : Classifier
        Output layer

    Examples
    --------
    >>> spec = build_preset("vgg-small", input_size=28, in_channels=1)
    >>> model = build_model(spec, k=4, seed=0)
    >>> [h.name for h in model.heads]
    ['head1', 'head2', 'head3']
    """

    def __init__(
        self,
        spec: ArchitectureSpec,
        partition: BlockPartition,
        blocks: List[Block],
        heads: List[AuxiliaryHead],
        classifier: Classifier,
    ) -> None:
        """Initialize model."""
        if len(blocks) != partition.k or len(heads) != partition.k - 1:
            raise ArchitectureError(
                f"K={partition.k} needs {partition.k} blocks and {partition.k - 1} "
                f"heads, got {len(blocks)} and {len(heads)}"
            )
        self.spec = spec
        self.partition = partition
        self.blocks = blocks
        self.heads = heads
        self.classifier = classifier
        self.tap = ClassifierTap(classifier)

    @property
    def k(self) -> int:
        """Block count."""
        return self.partition.k

    @property
    def num_classes(self) -> int:
        """Output classes."""
        return self.spec.num_classes

    def local_head(self, index: int) -> Union[AuxiliaryHead, ClassifierTap]:
        """Head producing the local loss of block ``index`` (0-based)."""
        if index < self.k - 1:
            return self.heads[index]
        return self.tap

    def parameters(self) -> List[Parameter]:
        """All trainable parameters: blocks, heads, classifier."""
        params: List[Parameter] = []
        for block in self.blocks:
            params.extend(block.parameters())
        for head in self.heads:
            params.extend(head.parameters())
        params.extend(self.classifier.parameters())
        return params

    def base_parameters(self) -> List[Parameter]:
        """Parameters of the network without auxiliary heads."""
        params: List[Parameter] = []
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend(self.classifier.parameters())
        return params

    def named_parameters(self) -> Dict[str, Parameter]:
        """Parameters keyed by qualified name."""
        return {p.name: p for p in self.parameters()}

    def stage_parameters(self, stage: int) -> List[Parameter]:
        """
        Parameters owned by one stage.

        Stages ``0..K-1`` are blocks with their heads; stage ``K`` is the
        output layer.
        """
        if stage == self.k:
            return self.classifier.parameters()
        if not 0 <= stage < self.k:
            raise IndexError(f"stage {stage} outside 0..{self.k}")
        params = self.blocks[stage].parameters()
        if stage < self.k - 1:
            params += self.heads[stage].parameters()
        return params

    def stage_parameter_names(self, stage: int) -> List[str]:
        """Qualified names owned by one stage."""
        return [p.name for p in self.stage_parameters(stage)]

    def buffers(self) -> Dict[str, np.ndarray]:
        """Batch-norm running statistics keyed by qualified name."""
        out: Dict[str, np.ndarray] = {}
        for block in self.blocks:
            for bn in block.batchnorms():
                out.update(bn.buffers())
        return out

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers as plain arrays (for dumps and comparisons)."""
        arrays = {p.name: p.value.data for p in self.parameters()}
        arrays.update(self.buffers())
        return arrays

    def features(self, images: Union[Tensor, np.ndarray], train: bool = False) -> Variable:
        """Forward through all blocks with constant parameters."""
        bind = ParameterBinding()
        x = Variable.constant(images)
        for block in self.blocks:
            x = block.forward(x, bind, train)
        return x

    def predict(self, images: Union[Tensor, np.ndarray]) -> Tensor:
        """
        Class probabilities from the output layer, in eval mode.

        Auxiliary heads never take part in prediction.
        """
        data = np.asarray(images)
        bind = ParameterBinding()
        chunks = []
        for start in range(0, data.shape[0], PREDICT_BATCH):
            feats = self.features(data[start : start + PREDICT_BATCH], train=False)
            logits = self.classifier.forward(feats, bind, train=False)
            chunks.append(F.softmax(logits.value).data)
        if not chunks:
            return Tensor.zeros((0, self.num_classes), dtype=data.dtype)
        return Tensor.wrap(np.concatenate(chunks, axis=0))

    def __repr__(self) -> str:
        """Return detailed representation."""
        return (
            f"DecoupledModel(spec={self.spec.name!r}, k={self.k}, "
            f"sizes={self.partition.sizes})"
        )


def attach_aux(
    partition: BlockPartition,
    spec: ArchitectureSpec,
    streams: Optional[StreamManager] = None,
) -> DecoupledModel:
    """
    Build the decoupled model for a partition.

    Blocks 1..K-1 each get an auxiliary head sized to their output
    channels; block K feeds the classifier. Base parameters draw from the
    ``init`` stream and heads from the ``heads`` stream, so the base
    network is identical for every K at a given seed.

    Parameters
    ----------
    partition : BlockPartition
        Unit-to-block assignment
    spec : ArchitectureSpec
        Architecture to instantiate
    streams : Optional[StreamManager]
        Random streams (seed 0 if omitted)
    """
    if partition.num_units != spec.num_units:
        raise ArchitectureError(
            f"partition covers {partition.num_units} units, spec has {spec.num_units}"
        )
    streams = streams or StreamManager(0)
    init = streams.get_stream("init")
    head_rng = streams.get_stream("heads")

    stem = build_stem(spec.stem, init) if spec.stem is not None else None
    units = [build_unit(f"unit{i + 1}", u, init) for i, u in enumerate(spec.units)]
    shapes = spec.propagate()

    blocks: List[Block] = []
    for index, (start, stop) in enumerate(partition.ranges):
        layers: List[Layer] = list(units[start:stop])
        if index == 0 and stem is not None:
            layers.insert(0, stem)
        blocks.append(Block(index, layers))

    classifier = Classifier(spec.feature_shape[0], spec.num_classes, init)
    heads = [
        AuxiliaryHead(f"head{index + 1}", shapes[stop - 1][0], spec.num_classes, head_rng)
        for index, (_, stop) in enumerate(partition.ranges[:-1])
    ]
    logger.debug("attached %d auxiliary heads at units %s", len(heads), partition.boundaries)
    return DecoupledModel(spec, partition, blocks, heads, classifier)


def build_model(spec: ArchitectureSpec, k: int, seed: int = 0) -> DecoupledModel:
    """Partition ``spec`` into ``k`` blocks and attach heads."""
    return attach_aux(partition(spec.num_units, k), spec, StreamManager(seed))
