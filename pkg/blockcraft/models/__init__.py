"""
Architecture specs, presets, block partitions and the decoupled model.
"""

from blockcraft.models.spec import ArchitectureSpec, StemSpec, UnitKind, UnitSpec
from blockcraft.models.presets import build_preset, preset_names
from blockcraft.models.partition import BlockPartition, partition
from blockcraft.models.network import (
    AuxiliaryHead,
    Block,
    Classifier,
    ClassifierTap,
    DecoupledModel,
    LossWeights,
    attach_aux,
    build_model,
)

__all__ = [
    "ArchitectureSpec",
    "StemSpec",
    "UnitKind",
    "UnitSpec",
    "build_preset",
    "preset_names",
    "BlockPartition",
    "partition",
    "AuxiliaryHead",
    "Block",
    "Classifier",
    "ClassifierTap",
    "DecoupledModel",
    "LossWeights",
    "attach_aux",
    "build_model",
]
