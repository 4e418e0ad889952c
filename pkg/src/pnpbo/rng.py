"""Seeded random streams.

A run owns one root seed. It is split with :class:`numpy.random.SeedSequence`
into independent child streams, always spawned in this order:

0. ``sampling``: the minibatch index draws shared by all three channels
1. ``x``: randomness private to the upper-level channel (PAGE coins)
2. ``y``: same for the lower-level channel
3. ``z``: same for the implicit channel

Because every consumer has its own child, swapping the estimator of one
channel never shifts the draws seen by another.
"""

from dataclasses import dataclass

import numpy as np

STREAM_ORDER = ("sampling", "x", "y", "z")


@dataclass
class Streams:
    sampling: np.random.Generator
    x: np.random.Generator
    y: np.random.Generator
    z: np.random.Generator

    def channel(self, name):
        return getattr(self, name)


def make_streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAM_ORDER))
    return Streams(*(np.random.default_rng(c) for c in children))


def derive_seed(base_seed, index):
    """Per-cell seed for grid searches: ``base ^ index``."""
    return int(base_seed) ^ int(index)


def draw_without_replacement(rng, population, size):
    """Uniform subset of ``range(population)``; sorted for stable summation."""
    if size >= population:
        return np.arange(population)
    return np.sort(rng.permutation(population)[:size])
