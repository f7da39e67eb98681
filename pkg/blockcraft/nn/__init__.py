"""
Layer rules and parameterized layers.
"""

from blockcraft.nn import functional
from blockcraft.nn.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    GlobalAvgPool,
    Layer,
    LayerKind,
    MaxPool2d,
    Parameter,
    ParameterBinding,
    ReLU,
    Sequential,
)

__all__ = [
    "functional",
    "BatchNorm2d",
    "Conv2d",
    "Dense",
    "GlobalAvgPool",
    "Layer",
    "LayerKind",
    "MaxPool2d",
    "Parameter",
    "ParameterBinding",
    "ReLU",
    "Sequential",
]
