"""
Configuration and logging helpers.
"""

from blockcraft.utils.config import ConfigLoader, ExperimentConfig, FileConfig, parse_config
from blockcraft.utils.logging import TrainingLogger, setup_logging

__all__ = [
    "ConfigLoader",
    "ExperimentConfig",
    "FileConfig",
    "parse_config",
    "TrainingLogger",
    "setup_logging",
]
