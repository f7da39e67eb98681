"""
SGD with classical momentum and weight decay, and the learning-rate schedule.
"""

from __future__ import annotations
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from blockcraft.core.tensor import Tensor, check_finite
from blockcraft.errors import NonFiniteError, ShapeError


class ScheduleKind(Enum):
    """Learning-rate decay shapes between ``lr0`` and ``lr_final``."""

    COSINE = "cosine"
    STEP = "step"


@dataclass(frozen=True)
class SgdConfig:
    """
    Optimizer and budget settings.

    Attributes
    ----------
    lr0 : float
        Initial learning rate
    lr_final : float
        Learning rate at the last step
    momentum : float
        Momentum coefficient in [0, 1)
    weight_decay : float
        L2 coefficient folded into the gradient
    batch_size : int
        Samples per step
    epochs : int
        Passes over the training split
    schedule : ScheduleKind
        Decay shape
    """

    lr0: float = 0.1
    lr_final: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 5
    schedule: ScheduleKind = ScheduleKind.COSINE

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", ScheduleKind(self.schedule))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list:
        """Every violated constraint, as messages."""
        out = []
        for name in ("lr0", "lr_final", "momentum", "weight_decay"):
            if not math.isfinite(getattr(self, name)):
                out.append(f"{name} must be finite")
        if not self.lr0 >= self.lr_final > 0:
            out.append(f"need lr0 >= lr_final > 0 (lr0={self.lr0}, lr_final={self.lr_final})")
        if not 0 <= self.momentum < 1:
            out.append(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            out.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            out.append(f"epochs must be >= 1, got {self.epochs}")
        return out

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data form."""
        data = asdict(self)
        data["schedule"] = self.schedule.value
        return data


def lr_at(step: int, total_steps: int, cfg: SgdConfig) -> float:
    """
    Learning rate at ``step`` of ``total_steps``.

    Cosine: ``lr_final + (lr0 - lr_final) * (1 + cos(pi * step / total)) / 2``.
    Step: decade drops from ``lr0`` spread evenly so the last interval runs
    at ``lr_final``.

    Examples
    --------
    >>> cfg = SgdConfig()
    >>> lr_at(0, 100, cfg), lr_at(100, 100, cfg)
    (0.1, 0.0001)
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == 0 or total_steps == 0:
        return cfg.lr0
    if step == total_steps:
        return cfg.lr_final
    if cfg.schedule is ScheduleKind.COSINE:
        progress = step / total_steps
        return cfg.lr_final + 0.5 * (cfg.lr0 - cfg.lr_final) * (1.0 + math.cos(math.pi * progress))
    drops = round(math.log10(cfg.lr0 / cfg.lr_final))
    if drops == 0:
        return cfg.lr0
    level = min(drops, (step * (drops + 1)) // total_steps)
    return max(cfg.lr_final, cfg.lr0 * 0.1**level)


def sgd_update(
    param: Tensor,
    grad: Tensor,
    velocity: Optional[Tensor],
    cfg: SgdConfig,
    lr: float,
    name: str = "",
) -> Tuple[Tensor, Tensor]:
    """
    One momentum step.

    ``v <- momentum * v + grad + weight_decay * param``;
    ``param <- param - lr * v``.

    Parameters
    ----------
    param : Tensor
        Current value
    grad : Tensor
        Gradient of the (weighted) loss
    velocity : Optional[Tensor]
        Momentum buffer; zeros if ``None``
    cfg : SgdConfig
        Momentum and weight decay
    lr : float
        Learning rate for this step
    name : str
        Parameter identity for error reports

    Returns
    -------
    Tuple[Tensor, Tensor]
        New parameter and new velocity

    Raises
    ------
    NonFiniteError
        If the gradient holds NaN or Inf
    """
    if grad.shape != param.shape:
        raise ShapeError(f"{name}: gradient shape {grad.shape} != parameter {param.shape}")
    if velocity is not None and velocity.shape != param.shape:
        raise ShapeError(f"{name}: velocity shape {velocity.shape} != parameter {param.shape}")
    try:
        check_finite(grad, f"grad {name}")
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite gradient for parameter '{name}'", exc.location) from exc
    dtype = param.dtype
    theta = param.data
    v = velocity.data if velocity is not None else np.zeros_like(theta)
    v_new = dtype.type(cfg.momentum) * v + grad.data.astype(dtype, copy=False)
    if cfg.weight_decay:
        v_new = v_new + dtype.type(cfg.weight_decay) * theta
    theta_new = theta - dtype.type(lr) * v_new
    return Tensor.wrap(theta_new), Tensor.wrap(v_new)
