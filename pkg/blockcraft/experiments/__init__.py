"""
Experiment runs, K sweeps and the command-line interface.
"""

from blockcraft.experiments.runner import (
    ExperimentResult,
    SweepResult,
    report,
    run_experiment,
    sweep_k,
)

__all__ = ["ExperimentResult", "SweepResult", "report", "run_experiment", "sweep_k"]
