"""
Command-line entry point.

Subcommands::

    blockcraft train --preset vgg-small --dataset mnist --data-dir data/mnist --k 4
    blockcraft sweep --config base.yaml --ks 1,2,4,8
    blockcraft gradcheck
    blockcraft report runs/vgg-small-mnist-k4-bwbpf-seq-s0

Every :class:`~blockcraft.utils.config.ExperimentConfig` key is also a
flag (``lr_final`` becomes ``--lr-final``); flags win over ``--config``.
"""

from __future__ import annotations
import argparse
import logging
import sys
from dataclasses import fields
from typing import Any, Dict, List, Optional, Sequence

from blockcraft.errors import (
    BlockcraftError,
    ConfigValidationError,
    DataFormatError,
    EmptyInputError,
    PipelineError,
)
from blockcraft.utils.config import ExperimentConfig, parse_config
from blockcraft.utils.logging import setup_logging

logger = logging.getLogger("blockcraft.cli")

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PIPELINE = 4
EXIT_RUNTIME = 5


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML or JSON file of experiment keys")
    group = parser.add_argument_group("experiment keys")
    for f in fields(ExperimentConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)}


def _parse_ks(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigValidationError([f"--ks must be a comma-separated list of integers, got {text!r}"])


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="blockcraft",
        description="Block-wise backprop-free training with local losses",
    )
    parser.add_argument("--log-level", default="INFO", help="logging level")
    parser.add_argument("--log-file", default=None, help="also log to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one experiment")
    _add_config_flags(train)

    sweep = sub.add_parser("sweep", help="run one experiment per K and write curve.csv")
    _add_config_flags(sweep)
    sweep.add_argument("--ks", required=True, help="comma-separated block counts, e.g. 1,2,4,8")

    grad = sub.add_parser("gradcheck", help="finite-difference check of every layer and a small model")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--tol", type=float, default=1e-4)
    grad.add_argument("--step", type=float, default=1e-5)

    rep = sub.add_parser("report", help="summarize a run or sweep directory")
    rep.add_argument("path")
    return parser


def _train(args: argparse.Namespace) -> int:
    from blockcraft.experiments.runner import run_experiment

    config = parse_config(args.config, _overrides(args))
    result = run_experiment(config)
    print(f"{config.run_id}: test_error={result.test_error} -> {result.output_dir}")
    return EXIT_OK


def _sweep(args: argparse.Namespace) -> int:
    from blockcraft.experiments.runner import sweep_k

    ks = _parse_ks(args.ks)
    base = parse_config(args.config, _overrides(args))
    result = sweep_k(base, ks)
    for k, error in result.curve:
        print(f"k={k}: test_error={error}")
    for k, message in sorted(result.failures.items()):
        print(f"k={k}: FAILED {message}", file=sys.stderr)
    print(f"curve -> {result.output_dir / 'curve.csv'}")
    return EXIT_OK if result.complete else EXIT_FAILED_CHECK


def _gradcheck(args: argparse.Namespace) -> int:
    from blockcraft.core.gradcheck import layer_suite

    reports = layer_suite(seed=args.seed, h=args.step, tol=args.tol)
    for rep in reports:
        print(rep)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} passed")
    return EXIT_OK if not failed else EXIT_FAILED_CHECK


def _report(args: argparse.Namespace) -> int:
    from blockcraft.experiments.runner import report

    print(report(args.path))
    return EXIT_OK


COMMANDS = {"train": _train, "sweep": _sweep, "gradcheck": _gradcheck, "report": _report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI and return the exit code.

    0 success, 1 failed gradient check or incomplete sweep, 2 invalid
    configuration, 3 data, format or filesystem error, 4 pipeline failure,
    5 any other blockcraft error.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    level = getattr(logging, str(args.log_level).upper(), logging.INFO)
    setup_logging(level, filename=args.log_file)
    try:
        return COMMANDS[args.command](args)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, EmptyInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except BlockcraftError as exc:
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
