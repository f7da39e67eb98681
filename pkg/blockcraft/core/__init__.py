"""
Tensors, reverse-mode differentiation and gradient checking.
"""

from blockcraft.core.tensor import (
    Precision,
    Tensor,
    elementwise,
    get_precision,
    matmul,
    precision,
    reduce,
    set_debug_checks,
    set_precision,
)
from blockcraft.core.autodiff import Tape, Variable, backward, detach
from blockcraft.core.gradcheck import GradCheckReport, grad_check, layer_suite

__all__ = [
    "Precision",
    "Tensor",
    "elementwise",
    "get_precision",
    "matmul",
    "precision",
    "reduce",
    "set_debug_checks",
    "set_precision",
    "Tape",
    "Variable",
    "backward",
    "detach",
    "GradCheckReport",
    "grad_check",
    "layer_suite",
]
