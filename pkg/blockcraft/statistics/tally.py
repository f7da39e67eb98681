"""
Running statistics over per-step training observations.
"""

from __future__ import annotations
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Tuple


@dataclass
class Tally:
    """
    Collects observations and keeps running statistics.

    Uses Welford's algorithm, so nothing is stored unless
    ``keep_history`` is set. NaN observations (e.g. the local losses of
    the BP baseline) are counted separately and excluded.

    Parameters
    ----------
    name : str
        Tally name
    keep_history : bool
        Whether to store (step, value) pairs

    Examples
    --------
    >>> tally = Tally(name="global_loss")
    >>> for m in state.epoch_metrics(0):
    ...     tally.observe(m.global_loss, m.step)
    >>> print(tally.mean, tally.std)
    """

    name: str = ""
    keep_history: bool = False

    _count: int = field(default=0, repr=False)
    _missing: int = field(default=0, repr=False)
    _mean: float = field(default=0.0, repr=False)
    _m2: float = field(default=0.0, repr=False)
    _min: float = field(default=float("inf"), repr=False)
    _max: float = field(default=float("-inf"), repr=False)
    _history: List[Tuple[int, float]] = field(default_factory=list, repr=False)

    @property
    def count(self) -> int:
        """Get number of finite observations."""
        return self._count

    @property
    def missing(self) -> int:
        """Get number of NaN observations skipped."""
        return self._missing

    @property
    def mean(self) -> float:
        """Get mean (NaN when empty)."""
        if self._count == 0:
            return math.nan
        return self._mean

    @property
    def variance(self) -> float:
        """Get sample variance."""
        if self._count < 2:
            return 0.0
        return self._m2 / (self._count - 1)

    @property
    def std(self) -> float:
        """Get sample standard deviation."""
        return math.sqrt(self.variance)

    @property
    def min(self) -> float:
        """Get minimum observation."""
        return self._min if self._count else math.nan

    @property
    def max(self) -> float:
        """Get maximum observation."""
        return self._max if self._count else math.nan

    def observe(self, value: float, step: int = 0) -> None:
        """
        Record an observation.

        Parameters
        ----------
        value : float
            Observed value
        step : int
            Training step of the observation (history only)
        """
        if math.isnan(value):
            self._missing += 1
            return
        self._count += 1
        delta = value - self._mean
        self._mean += delta / self._count
        self._m2 += delta * (value - self._mean)
        self._min = min(self._min, value)
        self._max = max(self._max, value)
        if self.keep_history:
            self._history.append((step, value))

    def observe_batch(self, values: Iterable[float]) -> None:
        """Record several observations."""
        for value in values:
            self.observe(value)

    def get_history(self) -> List[Tuple[int, float]]:
        """Copy of the (step, value) history."""
        return self._history.copy()

    def reset(self) -> None:
        """Reset all statistics."""
        self._count = 0
        self._missing = 0
        self._mean = 0.0
        self._m2 = 0.0
        self._min = float("inf")
        self._max = float("-inf")
        self._history.clear()

    def __repr__(self) -> str:
        """Return detailed representation."""
        return (
            f"Tally(name={self.name!r}, count={self._count}, "
            f"mean={self.mean:.4f}, std={self.std:.4f})"
        )
