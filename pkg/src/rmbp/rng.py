"""Reproducible random streams.

A stream is identified by the pair (master_seed, stream_index).  The pair is
mixed into a single 64-bit PCG64 seed with the splitmix64 finalizer, a
stateless avalanche permutation: every output bit depends on every input bit,
so distinct pairs land on statistically unrelated points of the generator's
seed space.  The same pair always yields the same bit stream for a fixed
numpy version, independent of platform.

Parallel work is organized as chunks; chunk ``k`` of a job draws from
``stream.child(k)``, which makes the merged output independent of how chunks
are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """One splitmix64 finalizer round (Steele, Lea & Flood's constants)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix_pair(a: int, b: int) -> int:
    """Avalanche-mix two 64-bit integers into one 64-bit value."""
    return splitmix64(splitmix64(a & _MASK64) ^ (b & _MASK64))


@dataclass(frozen=True)
class RngStream:
    """Immutable handle for one reproducible random stream.

    Every consumer derives a fresh ``numpy`` generator via :meth:`generator`,
    so calling an operation twice with the same stream replays the identical
    draw sequence.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK64)
        object.__setattr__(self, "stream_index", int(self.stream_index) & _MASK64)

    def generator(self) -> np.random.Generator:
        """A fresh PCG64 generator seeded from the mixed (seed, index) pair."""
        return np.random.Generator(np.random.PCG64(mix_pair(self.master_seed, self.stream_index)))

    def child(self, offset: int) -> "RngStream":
        """Derive an independent substream; distinct offsets give distinct streams."""
        return RngStream(self.master_seed, mix_pair(self.stream_index, offset))
