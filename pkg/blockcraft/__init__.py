"""
Blockcraft - Block-wise Backprop-free Training

Blockcraft trains convolutional networks split into K blocks. Every block
learns from its own local loss through an auxiliary head (global average
pooling plus a dense layer); the global loss updates the output layer
only. Because no gradient crosses a block boundary, the blocks can update
concurrently, and the package ships a pipelined executor whose results
match the sequential trainer bit for bit.

Example
-------
>>> from blockcraft import build_preset, build_model, Trainer, SgdConfig
>>> from blockcraft.data import synthetic_pair
>>>
>>> train, test = synthetic_pair(10, 64, (1, 8, 8), seed=0)
>>> spec = build_preset("vgg-small", num_classes=10, input_size=8, in_channels=1)
>>> model = build_model(spec, k=4, seed=0)
>>> history = Trainer(model, train, test, SgdConfig(epochs=2)).fit()
>>> print(history.final_test_error)

Features
--------
- Tape-based reverse-mode differentiation with explicit detach
- Convolution, batch normalization, pooling and residual units on numpy
- VGG- and ResNet-style presets partitioned into K blocks
- Sequential and pipelined block-wise training, plus an end-to-end baseline
- CIFAR-10 and MNIST loaders, deterministic batching
- Finite-difference gradient checks and a command-line runner

License
-------
MIT License
"""

__version__ = "0.1.0"
__author__ = "Blockcraft Contributors"

# Tensors and differentiation
from blockcraft.core.tensor import Tensor, Precision, precision
from blockcraft.core.autodiff import Tape, Variable, backward, detach

# Models
from blockcraft.models.presets import build_preset
from blockcraft.models.partition import partition
from blockcraft.models.network import DecoupledModel, LossWeights, attach_aux, build_model

# Training
from blockcraft.training.optimizer import SgdConfig, lr_at, sgd_update
from blockcraft.training.state import TrainState, StepMetrics
from blockcraft.training.trainer import Trainer, TrainMode, bp_step, bwbpf_step, evaluate

# Pipeline
from blockcraft.pipeline.executor import run_pipeline, run_sequential
from blockcraft.pipeline.report import throughput_report

# Random
from blockcraft.random.distributions import RandomGenerator
from blockcraft.random.streams import StreamManager

__all__ = [
    # Version
    "__version__",

    # Core
    "Tensor",
    "Precision",
    "precision",
    "Tape",
    "Variable",
    "backward",
    "detach",

    # Models
    "build_preset",
    "partition",
    "DecoupledModel",
    "LossWeights",
    "attach_aux",
    "build_model",

    # Training
    "SgdConfig",
    "lr_at",
    "sgd_update",
    "TrainState",
    "StepMetrics",
    "Trainer",
    "TrainMode",
    "bp_step",
    "bwbpf_step",
    "evaluate",

    # Pipeline
    "run_pipeline",
    "run_sequential",
    "throughput_report",

    # Random
    "RandomGenerator",
    "StreamManager",
]
