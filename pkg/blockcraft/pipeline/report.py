"""
Stage timing and throughput reporting.
"""

from __future__ import annotations
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from blockcraft.errors import EmptyInputError

TIMING_COLUMNS = ["stage", "busy_ms", "idle_ms", "utilization", "batches", "steady_throughput"]


@dataclass
class StageStats:
    """
    Busy/idle accounting for one stage.

    Attributes
    ----------
    name : str
        Stage name
    busy_ms : float
        Time spent computing (including injected delay)
    idle_ms : float
        Time spent waiting for input, snapshots or downstream space
    batches : int
        Batches completed
    completions_ms : List[float]
        Completion time of each batch, relative to the run start
    """

    name: str
    busy_ms: float = 0.0
    idle_ms: float = 0.0
    batches: int = 0
    completions_ms: List[float] = field(default_factory=list)

    def record_batch(self, busy_ms: float, completed_ms: float) -> None:
        """Record one completed batch."""
        self.busy_ms += busy_ms
        self.batches += 1
        self.completions_ms.append(completed_ms)

    def close(self, wall_ms: float) -> None:
        """Attribute the remaining wall time to idling."""
        self.idle_ms = max(0.0, wall_ms - self.busy_ms)

    @property
    def utilization(self) -> float:
        """Busy fraction of the stage's lifetime."""
        total = self.busy_ms + self.idle_ms
        if total == 0:
            return 0.0
        return self.busy_ms / total

    @property
    def steady_throughput(self) -> float:
        """
        Batches per second between the first and last completion.

        ``nan`` with fewer than two batches.
        """
        if self.batches < 2:
            return math.nan
        span = self.completions_ms[-1] - self.completions_ms[0]
        if span <= 0:
            return math.inf
        return (self.batches - 1) / (span / 1000.0)


@dataclass
class PipelineTiming:
    """
    Timing of one execution.

    Attributes
    ----------
    mode : str
        ``"sequential"`` or ``"pipeline"``
    stages : List[StageStats]
        One entry per stage (K blocks, then the classifier)
    wall_ms : float
        Total wall-clock time
    """

    mode: str
    stages: List[StageStats]
    wall_ms: float = 0.0

    @property
    def batches(self) -> int:
        """Batches completed by the final stage."""
        return self.stages[-1].batches if self.stages else 0

    def merge(self, other: "PipelineTiming") -> "PipelineTiming":
        """Concatenate two runs of the same shape (e.g. consecutive epochs)."""
        stages = []
        for mine, theirs in zip(self.stages, other.stages):
            offset = self.wall_ms
            stats = StageStats(mine.name, mine.busy_ms + theirs.busy_ms, mine.idle_ms + theirs.idle_ms)
            stats.batches = mine.batches + theirs.batches
            stats.completions_ms = mine.completions_ms + [t + offset for t in theirs.completions_ms]
            stages.append(stats)
        return PipelineTiming(self.mode, stages, self.wall_ms + other.wall_ms)


@dataclass(frozen=True)
class ThroughputSummary:
    """
    Overlap and speedup figures for one run.

    Attributes
    ----------
    mode : str
        Execution mode of the run
    batches : int
        Batches completed
    wall_ms : float
        Wall-clock time
    busy_fraction : Dict[str, float]
        Busy share per stage
    idle_fraction : Dict[str, float]
        Idle share per stage
    steady_throughput : float
        Batches per second at the final stage in steady state
    bound_speedup : float
        Total stage work over the slowest stage's work: the best a
        pipeline can do over sequential execution
    speedup : float
        Measured sequential wall time over this run's wall time
    """

    mode: str
    batches: int
    wall_ms: float
    busy_fraction: Dict[str, float]
    idle_fraction: Dict[str, float]
    steady_throughput: float
    bound_speedup: float
    speedup: float


def throughput_report(
    timing: PipelineTiming, sequential: Optional[PipelineTiming] = None
) -> ThroughputSummary:
    """
    Summarize stage overlap and speedup.

    Parameters
    ----------
    timing : PipelineTiming
        Run to summarize
    sequential : Optional[PipelineTiming]
        Measured sequential reference; a sequential run is its own
        reference (speedup 1.0)

    Raises
    ------
    EmptyInputError
        If the run completed no batch
    """
    if not timing.stages or timing.batches == 0:
        raise EmptyInputError("throughput report of an empty run")
    busy = {s.name: s.busy_ms for s in timing.stages}
    lifetime = {s.name: s.busy_ms + s.idle_ms for s in timing.stages}
    busy_fraction = {n: (busy[n] / lifetime[n] if lifetime[n] else 0.0) for n in busy}
    idle_fraction = {n: 1.0 - f if lifetime[n] else 0.0 for n, f in busy_fraction.items()}
    slowest = max(busy.values())
    bound = sum(busy.values()) / slowest if slowest > 0 else 1.0
    if timing.mode == "sequential":
        speedup = 1.0
    elif sequential is not None and timing.wall_ms > 0:
        speedup = sequential.wall_ms / timing.wall_ms
    else:
        speedup = math.nan
    return ThroughputSummary(
        mode=timing.mode,
        batches=timing.batches,
        wall_ms=timing.wall_ms,
        busy_fraction=busy_fraction,
        idle_fraction=idle_fraction,
        steady_throughput=timing.stages[-1].steady_throughput,
        bound_speedup=bound,
        speedup=speedup,
    )


def write_timing_csv(path: Union[str, Path], timing: PipelineTiming) -> Path:
    """
    Write one row per stage in ``TIMING_COLUMNS`` order.

    Columns are ``stage``, ``busy_ms``, ``idle_ms``, ``utilization``
    (busy_ms / (busy_ms + idle_ms), 0 for an unused stage), ``batches`` and
    ``steady_throughput`` (batches per second, ``nan`` below two batches).
    Floats are written with ``repr`` so they read back exactly.
    """
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TIMING_COLUMNS)
        writer.writeheader()
        for stats in timing.stages:
            writer.writerow(
                {
                    "stage": stats.name,
                    "busy_ms": repr(stats.busy_ms),
                    "idle_ms": repr(stats.idle_ms),
                    "utilization": repr(stats.utilization),
                    "batches": stats.batches,
                    "steady_throughput": repr(stats.steady_throughput),
                }
            )
    return path
