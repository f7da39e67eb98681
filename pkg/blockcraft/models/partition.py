"""
Division of a unit sequence into K contiguous blocks.
"""

from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from blockcraft.errors import PartitionError


@dataclass(frozen=True)
class BlockPartition:
    """
    K contiguous, non-empty unit ranges covering ``0..U-1`` exactly once.

    Attributes
    ----------
    num_units : int
        Unit count U
    ranges : Tuple[Tuple[int, int], ...]
        Half-open ``(start, stop)`` unit range per block
    """

    num_units: int
    ranges: Tuple[Tuple[int, int], ...]

    def __post_init__(self) -> None:
        expected = 0
        for start, stop in self.ranges:
            if start != expected or stop <= start:
                raise PartitionError(f"ranges {self.ranges} are not contiguous and non-empty")
            expected = stop
        if expected != self.num_units:
            raise PartitionError(
                f"ranges {self.ranges} do not cover {self.num_units} units"
            )

    @property
    def k(self) -> int:
        """Block count."""
        return len(self.ranges)

    @property
    def sizes(self) -> List[int]:
        """Units per block."""
        return [stop - start for start, stop in self.ranges]

    @property
    def boundaries(self) -> List[int]:
        """Unit indices after which an auxiliary head attaches (blocks 1..K-1)."""
        return [stop for _, stop in self.ranges[:-1]]

    def block_of(self, unit: int) -> int:
        """0-based block index holding ``unit``."""
        for index, (start, stop) in enumerate(self.ranges):
            if start <= unit < stop:
                return index
        raise PartitionError(f"unit {unit} outside 0..{self.num_units - 1}")

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data form."""
        return {"num_units": self.num_units, "ranges": [list(r) for r in self.ranges]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlockPartition":
        """Inverse of :meth:`to_dict`."""
        return cls(int(data["num_units"]), tuple(tuple(r) for r in data["ranges"]))


def partition(num_units: int, k: int) -> BlockPartition:
    """
    Split ``num_units`` units into ``k`` nearly equal contiguous blocks.

    The first ``U mod K`` blocks get ``ceil(U/K)`` units, the rest
    ``floor(U/K)``.

    Raises
    ------
    PartitionError
        If ``k`` is outside ``[1, num_units]``

    Examples
    --------
    >>> partition(18, 4).sizes
    [5, 5, 4, 4]
    """
    if not 1 <= k <= num_units:
        raise PartitionError(f"K must be in [1, {num_units}], got {k}")
    base, extra = divmod(num_units, k)
    ranges, start = [], 0
    for index in range(k):
        size = base + (1 if index < extra else 0)
        ranges.append((start, start + size))
        start += size
    return BlockPartition(num_units, tuple(ranges))
