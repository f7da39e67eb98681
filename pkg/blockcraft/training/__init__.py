"""
Optimizer, training state and per-stage update logic.

The epoch loop and the step functions live in
:mod:`blockcraft.training.trainer`.
"""

from blockcraft.training.optimizer import ScheduleKind, SgdConfig, lr_at, sgd_update
from blockcraft.training.state import StepMetrics, TrainState, combine_losses
from blockcraft.training.stages import BlockStage, OutputStage, build_stages

__all__ = [
    "ScheduleKind",
    "SgdConfig",
    "lr_at",
    "sgd_update",
    "StepMetrics",
    "TrainState",
    "combine_losses",
    "BlockStage",
    "OutputStage",
    "build_stages",
]
