"""
Bounded single-producer/single-consumer channels between pipeline stages.
"""

from __future__ import annotations
import queue
import threading
import time
from dataclasses import dataclass
from typing import Generic, Optional, TypeVar

T = TypeVar("T")

POLL_SECONDS = 0.05


class _Closed:
    """End-of-stream marker."""

    def __repr__(self) -> str:
        return "CLOSED"


CLOSED = _Closed()


class ChannelAborted(Exception):
    """Raised inside a worker when the executor aborts."""


@dataclass
class ChannelStats:
    """
    Traffic statistics for one channel.

    Attributes
    ----------
    puts : int
        Items sent
    gets : int
        Items received
    max_occupancy : int
        Largest number of items observed waiting in the channel
    max_in_flight : int
        Largest number of items sent and not yet released by the consumer
        (waiting plus held); at most capacity + 1
    put_wait_ms : float
        Time producers spent blocked on a full channel
    get_wait_ms : float
        Time consumers spent blocked on an empty channel
    """

    puts: int = 0
    gets: int = 0
    max_occupancy: int = 0
    max_in_flight: int = 0
    put_wait_ms: float = 0.0
    get_wait_ms: float = 0.0

    def record_put(self, occupancy: int, in_flight: int, waited_ms: float) -> None:
        """Record a completed put."""
        self.puts += 1
        self.max_occupancy = max(self.max_occupancy, occupancy)
        self.max_in_flight = max(self.max_in_flight, in_flight)
        self.put_wait_ms += waited_ms

    def record_get(self, in_flight: int, waited_ms: float) -> None:
        """Record a completed get."""
        self.gets += 1
        self.max_in_flight = max(self.max_in_flight, in_flight)
        self.get_wait_ms += waited_ms


class BoundedChannel(Generic[T]):
    """
    FIFO with a fixed capacity and cooperative abort.

    Blocking calls poll ``abort`` so a failing stage can unblock every
    other worker.

    Parameters
    ----------
    name : str
        Channel name (e.g. ``block1->block2``)
    capacity : int
        Maximum items waiting
    abort : Optional[threading.Event]
        Shared abort flag

    Examples
    --------
    >>> ch = BoundedChannel("a->b", capacity=2)
    >>> ch.put(1); ch.put(2)
    >>> ch.get()
    1
    """

    def __init__(
        self,
        name: str,
        capacity: int = 2,
        abort: Optional[threading.Event] = None,
    ) -> None:
        """Initialize channel."""
        if capacity < 1:
            raise ValueError(f"channel capacity must be >= 1, got {capacity}")
        self._name = name
        self._capacity = capacity
        self._queue: "queue.Queue[object]" = queue.Queue(maxsize=capacity)
        self._abort = abort or threading.Event()
        self._stats = ChannelStats()

    @property
    def name(self) -> str:
        """Get channel name."""
        return self._name

    @property
    def capacity(self) -> int:
        """Get capacity."""
        return self._capacity

    @property
    def stats(self) -> ChannelStats:
        """Get traffic statistics."""
        return self._stats

    def put(self, item: object) -> None:
        """
        Send an item, blocking while the channel is full.

        Raises
        ------
        ChannelAborted
            If the executor aborts while waiting
        """
        started = time.perf_counter()
        while True:
            if self._abort.is_set():
                raise ChannelAborted(self._name)
            try:
                self._queue.put(item, timeout=POLL_SECONDS)
                break
            except queue.Full:
                continue
        waited = (time.perf_counter() - started) * 1000.0
        with self._queue.mutex:
            occupancy = len(self._queue.queue)
            in_flight = self._queue.unfinished_tasks
        self._stats.record_put(occupancy, in_flight, waited)

    def get(self) -> object:
        """
        Receive the next item (possibly :data:`CLOSED`).

        Raises
        ------
        ChannelAborted
            If the executor aborts while waiting
        """
        started = time.perf_counter()
        while True:
            if self._abort.is_set():
                raise ChannelAborted(self._name)
            try:
                item = self._queue.get(timeout=POLL_SECONDS)
                break
            except queue.Empty:
                continue
        self._stats.record_get(self.in_flight, (time.perf_counter() - started) * 1000.0)
        return item

    def done(self) -> None:
        """
        Release the item most recently received.

        The consumer calls this once it no longer holds the item, so
        ``stats.max_in_flight`` counts waiting plus held items.

        Raises
        ------
        ValueError
            If more items are released than were received
        """
        self._queue.task_done()

    @property
    def in_flight(self) -> int:
        """Items sent and not yet released."""
        with self._queue.mutex:
            return self._queue.unfinished_tasks

    def close(self) -> None:
        """Send the end-of-stream marker."""
        self.put(CLOSED)

    def drain(self) -> list:
        """Remove and return everything currently waiting (no blocking)."""
        items = []
        while True:
            try:
                items.append(self._queue.get_nowait())
            except queue.Empty:
                return items

    def __len__(self) -> int:
        return self._queue.qsize()

    def __repr__(self) -> str:
        """Return detailed representation."""
        return (
            f"BoundedChannel(name={self._name!r}, length={len(self)}, "
            f"capacity={self._capacity})"
        )
