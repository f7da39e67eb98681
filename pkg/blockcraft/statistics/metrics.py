"""
Append-only metrics CSV.

Schema: ``run_id, epoch, step, lr, L_g, L_1..L_K, L_total, train_error,
test_error, wall_ms``. Floats are written with ``repr`` so values read
back bitwise; ``wall_ms`` is the only nondeterministic column.
"""

from __future__ import annotations
import csv
import math
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Union

if TYPE_CHECKING:
    from blockcraft.training.state import StepMetrics

NONDETERMINISTIC_COLUMNS = ("wall_ms",)


def metrics_header(k: int) -> List[str]:
    """Column names for a K-block run."""
    return (
        ["run_id", "epoch", "step", "lr", "L_g"]
        + [f"L_{i + 1}" for i in range(k)]
        + ["L_total", "train_error", "test_error", "wall_ms"]
    )


class MetricsWriter:
    """
    Writes one row per logged step.

    The header is written on creation; rows are appended and flushed
    immediately so a crashed run leaves every completed row on disk.

    Parameters
    ----------
    path : Union[str, Path]
        Output file
    k : int
        Block count (number of local-loss columns)
    run_id : str
        Value of the ``run_id`` column

    Examples
    --------
    >>> with MetricsWriter(out / "metrics.csv", k=4, run_id="demo") as writer:
    ...     writer.write(step_metrics)
    """

    def __init__(self, path: Union[str, Path], k: int, run_id: str) -> None:
        """Initialize writer."""
        self._path = Path(path)
        self._k = k
        self._run_id = run_id
        self._header = metrics_header(k)
        self._file = open(self._path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(self._header)
        self._file.flush()
        self._rows = 0

    @property
    def path(self) -> Path:
        """Get output path."""
        return self._path

    @property
    def rows(self) -> int:
        """Get number of rows written."""
        return self._rows

    def write(self, metrics: "StepMetrics", test_error: float = math.nan) -> None:
        """Append one row."""
        if len(metrics.local_losses) != self._k:
            raise ValueError(
                f"expected {self._k} local losses, got {len(metrics.local_losses)}"
            )
        row = [self._run_id, metrics.epoch, metrics.step, repr(metrics.lr), repr(metrics.global_loss)]
        row += [repr(v) for v in metrics.local_losses]
        row += [
            repr(metrics.total_loss),
            repr(metrics.train_error),
            repr(float(test_error)),
            repr(metrics.wall_ms),
        ]
        self._writer.writerow(row)
        self._file.flush()
        self._rows += 1

    def close(self) -> None:
        """Close the file."""
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"MetricsWriter(path={str(self._path)!r}, k={self._k}, rows={self._rows})"


def read_metrics(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Rows of a metrics CSV as dictionaries of raw strings."""
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def deterministic_columns(rows: List[Dict[str, str]], drop: Optional[tuple] = None) -> List[Dict[str, str]]:
    """Rows without the columns that carry wall-clock time."""
    drop = NONDETERMINISTIC_COLUMNS if drop is None else drop
    return [{k: v for k, v in row.items() if k not in drop} for row in rows]
