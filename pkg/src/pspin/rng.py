"""Deterministic random-stream derivation.

Every Monte Carlo draw in the package comes from a Philox counter-based
generator keyed by (master seed, stream label, index).  Streams never depend
on execution order or thread count: a replica (or a fixed-size chunk of
replicas) always derives its generator from its own index.
"""
from __future__ import annotations

from dataclasses import dataclass

from numpy.random import Generator, Philox, SeedSequence

# stream labels; part of the on-disk reproducibility contract
STREAM_SINGLE = 0
STREAM_VARIANCE = 1
STREAM_CURVE = 2
STREAM_CURVE_VAR = 3
STREAM_CHAOS = 4
STREAM_CLT = 5
STREAM_GUERRA = 6
STREAM_BOOTSTRAP = 7


@dataclass(frozen=True)
class SeedKey:
    """Key of one derived stream: (master seed, stream label, index)."""

    master: int
    stream: int = STREAM_SINGLE
    index: int = 0

    def generator(self) -> Generator:
        return Generator(Philox(SeedSequence((self.master, self.stream, self.index))))


def generator_for(master: int, stream: int, index: int) -> Generator:
    return SeedKey(master, stream, index).generator()


def as_seed_key(seed, stream: int = STREAM_SINGLE, index: int = 0) -> SeedKey:
    """Accept a raw integer master seed or a ready SeedKey."""
    if isinstance(seed, SeedKey):
        return seed
    return SeedKey(int(seed), stream, index)
