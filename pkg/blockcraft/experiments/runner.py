"""
Experiment execution: single runs, K sweeps and run reports.

A run directory holds::

    config.echo    validated configuration (JSON)
    metrics.csv    one row per step
    summary.json   final figures
    params.npz     final parameters and batch-norm buffers
    timing.csv     stage timing (pipeline mode)
    INCOMPLETE     present while running or after a failure
"""

from __future__ import annotations
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from blockcraft.core.tensor import precision
from blockcraft.data.datasets import Dataset, load_cifar10, load_mnist, synthetic_pair
from blockcraft.errors import ConfigValidationError
from blockcraft.models.network import build_model
from blockcraft.pipeline.report import throughput_report, write_timing_csv
from blockcraft.statistics.metrics import MetricsWriter
from blockcraft.training.trainer import EpochSummary, Trainer
from blockcraft.utils.config import ConfigLoader, ExperimentConfig

logger = logging.getLogger("blockcraft.experiments")

INCOMPLETE_MARKER = "INCOMPLETE"
CURVE_COLUMNS = ["k", "test_error", "run_id"]


@dataclass
class ExperimentResult:
    """
    Outcome of one run.

    Attributes
    ----------
    config : ExperimentConfig
        Configuration that ran
    output_dir : Path
        Run directory
    summary : Dict[str, Any]
        Contents of ``summary.json``
    """

    config: ExperimentConfig
    output_dir: Path
    summary: Dict[str, Any]

    @property
    def test_error(self) -> float:
        """Final test error."""
        return self.summary["test_error"]


@dataclass
class SweepResult:
    """Outcome of a K sweep; ``failures`` maps K to the error message."""

    output_dir: Path
    runs: List[ExperimentResult] = field(default_factory=list)
    failures: Dict[int, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        """Whether every K finished."""
        return not self.failures

    @property
    def curve(self) -> List[Tuple[int, float]]:
        """(K, final test error) per finished run."""
        return [(r.config.k, r.test_error) for r in self.runs]


def load_datasets(config: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Train and test splits for a config, cut to the configured subsets."""
    if config.dataset == "cifar10":
        train, test = load_cifar10(config.data_dir)
    elif config.dataset == "mnist":
        train, test = load_mnist(config.data_dir)
    else:
        train, test = synthetic_pair(
            config.synthetic_classes,
            config.synthetic_per_class,
            config.input_shape,
            seed=config.seed,
        )
    return train.subset(config.train_subset), test.subset(config.test_subset)


def _json_float(value: float) -> Optional[float]:
    return None if value is None or not math.isfinite(value) else value


def run_experiment(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> ExperimentResult:
    """
    Train, evaluate and write every artifact of one run.

    Parameters
    ----------
    config : ExperimentConfig
        Validated configuration
    output_dir : Optional[Union[str, Path]]
        Run directory (default ``<config.output_dir>/<run_id>``)

    Returns
    -------
    ExperimentResult
        Summary of the finished run

    Raises
    ------
    BlockcraftError
        Propagated from loading or training; the run directory keeps its
        ``INCOMPLETE`` marker with the error message
    """
    config.validate()
    out = Path(output_dir) if output_dir is not None else Path(config.output_dir) / config.run_id
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("running\n")
    ConfigLoader.save(config.to_dict(), out / "config.echo")
    logger.info("run %s -> %s", config.run_id, out)

    try:
        with precision(config.precision):
            summary = _execute(config, out)
    except Exception as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        logger.error("run %s failed: %s", config.run_id, exc)
        raise
    marker.unlink()
    return ExperimentResult(config, out, summary)


def _execute(config: ExperimentConfig, out: Path) -> Dict[str, Any]:
    train, test = load_datasets(config)
    spec = config.build_spec()
    model = build_model(spec, config.k, seed=config.seed)
    trainer = Trainer(
        model,
        train,
        test,
        config.sgd,
        config.loss_weights,
        mode=config.mode,
        seed=config.seed,
        augment_policy=config.augment,
        queue_capacity=config.queue_capacity,
        stage_delay=config.stage_delay_ms / 1000.0 if config.stage_delay_ms else None,
        log_every=config.log_every,
    )
    with MetricsWriter(out / "metrics.csv", config.k, config.run_id) as writer:

        def write_epoch(summary: EpochSummary) -> None:
            last = len(summary.steps) - 1
            for i, step in enumerate(summary.steps):
                writer.write(step, summary.test_error if i == last else math.nan)

        history = trainer.fit(on_epoch=write_epoch)

    np.savez(out / "params.npz", **model.state_arrays())
    final = history.steps[-1] if history.steps else None
    summary: Dict[str, Any] = {
        "run_id": config.run_id,
        "preset": config.preset,
        "dataset": config.dataset,
        "k": config.k,
        "mode": config.mode,
        "seed": config.seed,
        "precision": config.precision,
        "epochs": config.epochs,
        "steps": len(history.steps),
        "train_samples": len(train),
        "test_samples": len(test),
        "parameters": sum(p.size for p in model.parameters()),
        "base_parameters": sum(p.size for p in model.base_parameters()),
        "partition": list(model.partition.sizes),
        "standardization": {"mean": list(train.mean), "std": list(train.std)},
        "test_error": _json_float(history.final_test_error),
        "test_errors": [_json_float(e.test_error) for e in history.epochs],
        "final_global_loss": _json_float(final.global_loss) if final else None,
        "final_total_loss": _json_float(final.total_loss) if final else None,
        "wall_ms": final.wall_ms if final else 0.0,
    }
    if history.timing is not None:
        write_timing_csv(out / "timing.csv", history.timing)
        report = throughput_report(history.timing)
        summary["throughput"] = {
            "steady_batches_per_s": _json_float(report.steady_throughput),
            "bound_speedup": report.bound_speedup,
            "busy_fraction": report.busy_fraction,
        }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


def sweep_k(
    base: ExperimentConfig,
    ks: Sequence[int],
    output_dir: Optional[Union[str, Path]] = None,
) -> SweepResult:
    """
    Run one experiment per K with a shared seed and write ``curve.csv``.

    The trend over K is reported, never asserted. A failing run does not
    stop the sweep but leaves an ``INCOMPLETE`` marker in the sweep
    directory.

    Raises
    ------
    ConfigValidationError
        If the K list is empty, repeats a value or holds an invalid K
    """
    ks = [int(k) for k in ks]
    problems: List[str] = []
    if not ks:
        problems.append("K list is empty")
    duplicates = sorted({k for k in ks if ks.count(k) > 1})
    if duplicates:
        problems.append(f"duplicate K values: {duplicates}")
    configs: List[ExperimentConfig] = []
    for k in ks:
        try:
            configs.append(base.replace(k=k))
        except ConfigValidationError as exc:
            problems.extend(f"k={k}: {e}" for e in exc.errors)
    if problems:
        raise ConfigValidationError(problems)

    out = (
        Path(output_dir)
        if output_dir is not None
        else Path(base.output_dir) / f"sweep-{base.preset}-{base.dataset}-{base.mode}-s{base.seed}"
    )
    out.mkdir(parents=True, exist_ok=True)
    result = SweepResult(out)
    for config in configs:
        try:
            result.runs.append(run_experiment(config, out / config.run_id))
        except Exception as exc:  # noqa: BLE001
            result.failures[config.k] = f"{type(exc).__name__}: {exc}"

    with open(out / "curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_COLUMNS)
        for run in result.runs:
            writer.writerow([run.config.k, repr(run.test_error), run.config.run_id])
    marker = out / INCOMPLETE_MARKER
    if result.failures:
        marker.write_text("".join(f"k={k}: {msg}\n" for k, msg in sorted(result.failures.items())))
        logger.warning("sweep incomplete: %d of %d runs failed", len(result.failures), len(ks))
    elif marker.exists():
        marker.unlink()
    return result


def report(path: Union[str, Path]) -> str:
    """
    Plain-text summary of a run or sweep directory.

    Raises
    ------
    FileNotFoundError
        If ``path`` holds neither ``summary.json`` nor ``curve.csv``
    """
    path = Path(path)
    lines: List[str] = []
    if (path / INCOMPLETE_MARKER).exists():
        lines.append(f"INCOMPLETE: {(path / INCOMPLETE_MARKER).read_text().strip()}")
    if (path / "curve.csv").exists():
        with open(path / "curve.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        lines.append(f"sweep {path.name}: {len(rows)} runs")
        lines.append(f"{'K':>4}  {'test error':>10}")
        for row in rows:
            lines.append(f"{int(row['k']):>4}  {float(row['test_error']):>10.4f}")
        return "\n".join(lines)
    if (path / "summary.json").exists():
        with open(path / "summary.json") as f:
            summary = json.load(f)
        error = summary.get("test_error")
        lines.append(f"run {summary['run_id']}")
        lines.append(f"  mode={summary['mode']} k={summary['k']} partition={summary['partition']}")
        lines.append(f"  steps={summary['steps']} wall_ms={summary['wall_ms']:.1f}")
        lines.append(f"  test_error={'n/a' if error is None else f'{error:.4f}'}")
        if "throughput" in summary:
            t = summary["throughput"]
            lines.append(f"  bound_speedup={t['bound_speedup']:.2f}")
        return "\n".join(lines)
    raise FileNotFoundError(f"no summary.json or curve.csv under {path}")
