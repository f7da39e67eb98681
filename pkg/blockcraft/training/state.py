"""
Mutable training state and per-step metrics.
"""

from __future__ import annotations
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from blockcraft.core.tensor import Tensor
from blockcraft.models.network import LossWeights
from blockcraft.training.optimizer import SgdConfig, lr_at


@dataclass(frozen=True)
class StepMetrics:
    """
    Losses and bookkeeping for one training step.

    Attributes
    ----------
    step : int
        Global step index (also the batch id)
    epoch : int
        Epoch index
    lr : float
        Learning rate used
    global_loss : float
        Output-layer loss
    local_losses : Tuple[float, ...]
        Local loss per block, ascending; NaN for the BP baseline
    total_loss : float
        Weighted total
    train_error : float
        Output-layer error on the batch, before the update
    wall_ms : float
        Wall-clock time since the run started
    """

    step: int
    epoch: int
    lr: float
    global_loss: float
    local_losses: Tuple[float, ...]
    total_loss: float
    train_error: float
    wall_ms: float = 0.0

    def losses_equal(self, other: "StepMetrics") -> bool:
        """Bitwise equality of every logged loss (wall time ignored)."""

        def same(a: float, b: float) -> bool:
            return (math.isnan(a) and math.isnan(b)) or a == b

        return (
            self.step == other.step
            and same(self.global_loss, other.global_loss)
            and len(self.local_losses) == len(other.local_losses)
            and all(same(a, b) for a, b in zip(self.local_losses, other.local_losses))
            and same(self.total_loss, other.total_loss)
            and same(self.train_error, other.train_error)
        )


def combine_losses(
    weights: LossWeights, global_loss: float, local_losses: Sequence[float]
) -> float:
    """
    Weighted total ``lambda1 * L_g + lambda2 * sum(L_l)``.

    The local sum runs left to right, block 1 first.
    """
    local_sum = 0.0
    for value in local_losses:
        local_sum = local_sum + value
    return weights.lambda1 * global_loss + weights.lambda2 * local_sum


@dataclass
class TrainState:
    """
    Velocities, position in the schedule and the metrics log.

    Parameters
    ----------
    cfg : SgdConfig
        Optimizer settings
    total_steps : int
        Steps in the whole run (drives the schedule)

    Examples
    --------
    >>> state = TrainState(SgdConfig(epochs=1), total_steps=100)
    >>> state.lr
    0.1
    """

    cfg: SgdConfig
    total_steps: int
    step: int = 0
    epoch: int = 0
    velocities: Dict[str, Tensor] = field(default_factory=dict)
    metrics: List[StepMetrics] = field(default_factory=list)
    started_at: float = field(default_factory=time.perf_counter)

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")

    def lr_for(self, step: int) -> float:
        """Scheduled learning rate for a global step (clamped to the run)."""
        return lr_at(min(step, self.total_steps), self.total_steps, self.cfg)

    @property
    def lr(self) -> float:
        """Learning rate for the next step."""
        return self.lr_for(self.step)

    def record(self, metrics: StepMetrics) -> None:
        """Append a step record and advance the step counter."""
        if metrics.step < self.step:
            raise ValueError(f"step {metrics.step} recorded after step {self.step}")
        self.metrics.append(metrics)
        self.step = metrics.step + 1

    def velocity(self, name: str) -> Optional[Tensor]:
        """Momentum buffer for a parameter, if any."""
        return self.velocities.get(name)

    def epoch_metrics(self, epoch: int) -> List[StepMetrics]:
        """Records of one epoch."""
        return [m for m in self.metrics if m.epoch == epoch]
