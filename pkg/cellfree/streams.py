"""Seeded random streams.

Every random draw in the package goes through a :class:`numpy.random.Generator`.
Callers pass either an integer seed, a :class:`numpy.random.SeedSequence` or a
ready generator; Monte-Carlo loops derive per-(drop, trial) substreams from the
master seed so results do not depend on execution order.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | np.random.SeedSequence | np.random.Generator | None


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Return a generator for ``seed`` (generators pass through untouched)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return the generator for the substream addressed by ``keys``.

    ``substream(seed, drop, trial)`` is the same generator no matter which
    worker asks for it or in which order.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(sequence))


def complex_normal(
    rng: np.random.Generator, shape: tuple[int, ...] | int
) -> np.ndarray:
    """Draw i.i.d. CN(0, 1) entries (variance 1/2 per real dimension)."""
    real = rng.standard_normal(shape)
    imag = rng.standard_normal(shape)
    return (real + 1j * imag) / np.sqrt(2.0)
