"""
Seeded random number generation.

Every generator is a numpy ``Generator`` over PCG64; named streams derive
their seeds from one base seed so runs are reproducible bitwise.
"""

from blockcraft.random.distributions import RandomGenerator
from blockcraft.random.streams import RandomStream, StreamManager, derive_seed_sequence

__all__ = ["RandomGenerator", "RandomStream", "StreamManager", "derive_seed_sequence"]
