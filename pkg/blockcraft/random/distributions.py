"""
Seeded random tensor generation.

Every draw goes through numpy's PCG64 bit generator, so an identical seed
gives an identical stream on every platform.
"""

from __future__ import annotations
import math
from typing import Any, Dict, Optional, Sequence

import numpy as np

from blockcraft.core.tensor import Tensor, get_precision


class RandomGenerator:
    """
    Random tensor generator over PCG64.

    A generator is single-owner: hand it off, never share it between
    concurrent workers.

    Parameters
    ----------
    seed : Optional[int]
        Random seed for reproducibility

    Examples
    --------
    >>> rng = RandomGenerator(seed=42)
    >>> w = rng.normal((16, 8), mean=0.0, std=0.1)
    >>> w.shape
    (16, 8)
    """

    algorithm = "PCG64"

    def __init__(self, seed: Optional[int] = None) -> None:
        """Initialize generator."""
        self._seed = seed
        self._rng = np.random.Generator(np.random.PCG64(seed))

    @classmethod
    def from_seed_sequence(cls, seq: np.random.SeedSequence) -> "RandomGenerator":
        """Create a generator from an explicit seed sequence."""
        gen = cls.__new__(cls)
        gen._seed = int(seq.generate_state(1)[0])
        gen._rng = np.random.Generator(np.random.PCG64(seq))
        return gen

    @property
    def seed(self) -> Optional[int]:
        """Get initial seed."""
        return self._seed

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator."""
        return self._rng

    def get_state(self) -> Dict[str, Any]:
        """Get current bit-generator state for checkpointing."""
        return self._rng.bit_generator.state

    def set_state(self, state: Dict[str, Any]) -> None:
        """Restore bit-generator state from checkpoint."""
        self._rng.bit_generator.state = state

    def normal(
        self,
        shape: Sequence[int],
        mean: float = 0.0,
        std: float = 1.0,
        dtype: Optional[Any] = None,
    ) -> Tensor:
        """
        Normal (Gaussian) tensor.

        Parameters
        ----------
        shape : Sequence[int]
            Output shape
        mean : float
            Mean
        std : float
            Standard deviation, must be non-negative

        Returns
        -------
        Tensor
            Samples in the requested (or default) precision
        """
        if not std >= 0:
            raise ValueError(f"std must be non-negative, got {std}")
        dtype = dtype or get_precision().dtype
        if std == 0:
            return Tensor.wrap(np.full(tuple(shape), mean, dtype=dtype))
        values = self._rng.normal(loc=mean, scale=std, size=tuple(shape))
        return Tensor.wrap(values.astype(dtype, copy=False))

    def uniform(
        self,
        shape: Sequence[int],
        lo: float = 0.0,
        hi: float = 1.0,
        dtype: Optional[Any] = None,
    ) -> Tensor:
        """
        Uniform tensor on [lo, hi).

        Parameters
        ----------
        shape : Sequence[int]
            Output shape
        lo : float
            Lower bound
        hi : float
            Upper bound, must satisfy ``lo <= hi``
        """
        if not lo <= hi:
            raise ValueError(f"uniform needs lo <= hi, got lo={lo}, hi={hi}")
        dtype = dtype or get_precision().dtype
        values = self._rng.uniform(low=lo, high=hi, size=tuple(shape))
        return Tensor.wrap(values.astype(dtype, copy=False))

    def he_normal(
        self, shape: Sequence[int], fan_in: int, dtype: Optional[Any] = None
    ) -> Tensor:
        """He-normal initialization: N(0, 2 / fan_in)."""
        if fan_in < 1:
            raise ValueError(f"fan_in must be positive, got {fan_in}")
        return self.normal(shape, 0.0, math.sqrt(2.0 / fan_in), dtype=dtype)

    def integers(self, low: int, high: int, size: Optional[Sequence[int]] = None) -> Any:
        """Integers on [low, high)."""
        return self._rng.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of ``0..n-1``."""
        return self._rng.permutation(n)

    def bernoulli(self, p: float, size: int) -> np.ndarray:
        """Boolean draws with success probability ``p``."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {p}")
        return self._rng.random(size) < p

    def __repr__(self) -> str:
        """Return detailed representation."""
        return f"RandomGenerator(algorithm={self.algorithm}, seed={self._seed})"
