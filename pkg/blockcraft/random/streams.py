"""
Named random streams.

Each consumer of randomness (weight init, shuffling, augmentation, synthetic
data) draws from its own stream so that changing one never shifts another.
"""

from __future__ import annotations
import zlib
from typing import Any, Dict, Optional

import numpy as np

from blockcraft.random.distributions import RandomGenerator


def derive_seed_sequence(base_seed: int, *keys: Any) -> np.random.SeedSequence:
    """
    Seed sequence for ``base_seed`` and a tuple of keys.

    String keys are reduced with CRC-32, which is stable across processes
    (unlike ``hash``).
    """
    entropy = [int(base_seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            entropy.append(int(key))
    return np.random.SeedSequence(entropy)


class RandomStream(RandomGenerator):
    """
    Generator that remembers which consumer it belongs to.

    Parameters
    ----------
    name : str
        Stream name
    seed : Optional[int]
        Initial seed
    """

    def __init__(self, name: str, seed: Optional[int] = None) -> None:
        """Initialize stream."""
        super().__init__(seed=seed)
        self._name = name

    @property
    def name(self) -> str:
        """Get stream name."""
        return self._name

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"RandomStream(name={self._name!r}, seed={self._seed})"


class StreamManager:
    """
    Manages the named streams of one training run.

    Stream seeds are derived from ``(base_seed, name)`` so the same run
    configuration always sees the same numbers. ``get_stream`` caches a
    stream per name (weights draw from it once); ``epoch_stream`` hands out
    a fresh generator keyed by epoch for consumers that restart every epoch.

    Parameters
    ----------
    base_seed : int
        Run seed

    Examples
    --------
    >>> manager = StreamManager(base_seed=42)
    >>> init = manager.get_stream("init")
    >>> shuffle = manager.epoch_stream("shuffle", epoch=3)
    """

    def __init__(self, base_seed: int = 0) -> None:
        """Initialize stream manager."""
        self._base_seed = int(base_seed)
        self._streams: Dict[str, RandomStream] = {}

    @property
    def base_seed(self) -> int:
        """Run seed."""
        return self._base_seed

    def get_stream(self, name: str) -> RandomStream:
        """Cached stream for ``name``, created on first use."""
        stream = self._streams.get(name)
        if stream is None:
            state = derive_seed_sequence(self._base_seed, name).generate_state(2, np.uint32)
            seed = (int(state[0]) << 31) ^ int(state[1])
            stream = self._streams[name] = RandomStream(name, seed=seed)
        return stream

    def epoch_stream(self, name: str, epoch: int) -> RandomGenerator:
        """
        Fresh generator for ``(base_seed, name, epoch)``.

        Not cached: every call restarts the stream.
        """
        return RandomGenerator.from_seed_sequence(
            derive_seed_sequence(self._base_seed, name, epoch)
        )

    def __repr__(self) -> str:
        return f"StreamManager(base_seed={self._base_seed}, streams={sorted(self._streams)})"
