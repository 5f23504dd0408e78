"""Seeded RNG streams shared by all modules."""

import numpy as np


def seeded_rng(seed, *stream):
    """Independent generator for (seed, stream...); same args give the same stream.

    Extra integers name a sub-stream so parallel workers and multi-stage
    pipelines never share draws.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))
