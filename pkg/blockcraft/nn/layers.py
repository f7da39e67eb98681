"""
Layer objects holding named parameters.

A layer owns :class:`Parameter` slots. Each forward pass receives a
:class:`ParameterBinding` deciding how those slots enter the computation:
watched on a tape (trainable for this loss) or as constants.
"""

from __future__ import annotations
import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from blockcraft.core.autodiff import Tape, Variable
from blockcraft.core.tensor import Tensor, get_precision
from blockcraft.nn import functional as F
from blockcraft.random.distributions import RandomGenerator

logger = logging.getLogger("blockcraft.layers")


class LayerKind(Enum):
    """Layer kinds used by the architecture presets."""

    CONV2D = "conv2d"
    DENSE = "dense"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    MAXPOOL = "maxpool"
    GAP = "gap"
    RESIDUAL_ADD = "residual-add"


class Parameter:
    """
    Named, replaceable parameter slot.

    The value itself is an immutable :class:`Tensor`; an update swaps in a
    new tensor.

    Parameters
    ----------
    name : str
        Qualified name, e.g. ``block1.unit2.conv1.weight``
    value : Tensor
        Initial value
    """

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: Tensor) -> None:
        """Initialize parameter."""
        self.name = name
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        """Parameter shape."""
        return self.value.shape

    @property
    def size(self) -> int:
        """Number of scalars."""
        return self.value.size

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"Parameter(name={self.name!r}, shape={self.shape})"


class ParameterBinding:
    """
    Decides how parameters enter one forward pass.

    With a tape, each parameter is watched once under its qualified name.
    Without a tape, or when frozen, parameters are constants.

    Parameters
    ----------
    tape : Optional[Tape]
        Tape to watch parameters on
    frozen : bool
        Force constants even if a tape is given

    Examples
    --------
    >>> tape = Tape("block1")
    >>> bind = ParameterBinding(tape)
    >>> y = layer.forward(x, bind, train=True)
    """

    def __init__(self, tape: Optional[Tape] = None, frozen: bool = False) -> None:
        """Initialize binding."""
        self.tape = tape
        self.frozen = frozen
        self._bound: Dict[str, Variable] = {}

    @property
    def trainable(self) -> bool:
        """Whether bound parameters receive gradient."""
        return self.tape is not None and not self.frozen

    def __call__(self, param: Parameter) -> Variable:
        """Variable for ``param`` in this pass."""
        if not self.trainable:
            return Variable(param.value, name=param.name)
        bound = self._bound.get(param.name)
        if bound is None:
            bound = self.tape.watch(param.value, name=param.name)
            self._bound[param.name] = bound
        return bound


class Layer:
    """
    Base class for layers.

    Parameters
    ----------
    name : str
        Qualified prefix for parameter names
    """

    kind: LayerKind

    def __init__(self, name: str) -> None:
        """Initialize layer."""
        self.name = name

    def parameters(self) -> List[Parameter]:
        """Trainable parameters in declaration order."""
        return []

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        """Apply the layer."""
        raise NotImplementedError

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"{type(self).__name__}(name={self.name!r})"


class Conv2d(Layer):
    """
    Convolution layer with He-normal kernels.

    Parameters
    ----------
    name : str
        Qualified prefix
    in_channels : int
        Input channels
    out_channels : int
        Output channels
    kernel : int
        Square kernel extent
    rng : RandomGenerator
        Initialization stream
    stride : int
        Window step
    padding : F.Padding
        ``"valid"``, ``"same"`` or an explicit amount
    bias : bool
        Whether to add a per-channel bias (zero-initialized)
    """

    kind = LayerKind.CONV2D

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: RandomGenerator,
        stride: int = 1,
        padding: F.Padding = "same",
        bias: bool = True,
    ) -> None:
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = F.resolve_padding(padding, kernel)
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(
            f"{name}.weight",
            rng.he_normal((out_channels, in_channels, kernel, kernel), fan_in),
        )
        self.bias = (
            Parameter(f"{name}.bias", Tensor.zeros((out_channels,))) if bias else None
        )

    def parameters(self) -> List[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        bias = bind(self.bias) if self.bias is not None else None
        return F.conv2d(x, bind(self.weight), bias, self.stride, self.padding)


class Dense(Layer):
    """Fully connected layer, weight ``[out, in]``."""

    kind = LayerKind.DENSE

    def __init__(
        self, name: str, in_features: int, out_features: int, rng: RandomGenerator
    ) -> None:
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(
            f"{name}.weight", rng.he_normal((out_features, in_features), in_features)
        )
        self.bias = Parameter(f"{name}.bias", Tensor.zeros((out_features,)))

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        return F.dense(x, bind(self.weight), bind(self.bias))


class BatchNorm2d(Layer):
    """
    Per-channel batch normalization.

    Running statistics are buffers, not parameters: they change only in
    train mode and belong to whichever block owns the layer.
    """

    kind = LayerKind.BATCHNORM

    def __init__(
        self,
        name: str,
        channels: int,
        momentum: float = F.BN_MOMENTUM,
        eps: float = F.BN_EPS,
    ) -> None:
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        dtype = get_precision().dtype
        self.gamma = Parameter(f"{name}.gamma", Tensor.full((channels,), 1.0))
        self.beta = Parameter(f"{name}.beta", Tensor.zeros((channels,)))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def parameters(self) -> List[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> Dict[str, np.ndarray]:
        """Running statistics keyed by qualified name."""
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        if not train:
            return F.batchnorm_eval(
                x,
                bind(self.gamma),
                bind(self.beta),
                self.running_mean,
                self.running_var,
                self.eps,
            )
        out, mu, var = F.batchnorm_train(x, bind(self.gamma), bind(self.beta), self.eps)
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mu.astype(
            self.running_mean.dtype
        )
        self.running_var = (1.0 - m) * self.running_var + m * var.astype(
            self.running_var.dtype
        )
        return out


class ReLU(Layer):
    """Rectified linear unit."""

    kind = LayerKind.RELU

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        return F.relu(x)


class MaxPool2d(Layer):
    """Max pooling with lowest-index tie-break."""

    kind = LayerKind.MAXPOOL

    def __init__(self, name: str, kernel: int = 2, stride: Optional[int] = None) -> None:
        super().__init__(name)
        self.kernel = kernel
        self.stride = stride or kernel

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        return F.maxpool2d(x, self.kernel, self.stride)


class GlobalAvgPool(Layer):
    """Spatial mean pooling to ``[B, C]``."""

    kind = LayerKind.GAP

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        return F.global_avg_pool(x)


class Sequential(Layer):
    """Layers applied in order."""

    def __init__(self, name: str, layers: List[Layer]) -> None:
        super().__init__(name)
        self.layers = list(layers)

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def batchnorms(self) -> List[BatchNorm2d]:
        """Batch-norm layers in order."""
        return [layer for layer in self.layers if isinstance(layer, BatchNorm2d)]

    def forward(self, x: Variable, bind: ParameterBinding, train: bool) -> Variable:
        for layer in self.layers:
            x = layer.forward(x, bind, train)
        return x
