"""Seeded random sources.

Every stochastic routine in the package takes an explicit
``numpy.random.Generator``.  Generators are always built on PCG64, a 64-bit
permuted congruential generator, so that a given integer seed reproduces the
same stream on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np

Seed = int | np.random.SeedSequence


def make_rng(seed: Seed) -> np.random.Generator:
    """Return a PCG64-backed generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn(seed: Seed, n: int) -> list[np.random.Generator]:
    """Return ``n`` statistically independent generators derived from ``seed``.

    Child streams depend only on ``seed`` and their index, which lets callers
    hand a fixed stream to each channel / user / density without the streams
    shifting when another part of the experiment draws more numbers.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_rng(child) for child in ss.spawn(n)]
