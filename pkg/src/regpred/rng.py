"""Seedable random streams addressed by integer keys.

Every stream is a Philox generator keyed by ``SeedSequence(seed, spawn_key)``,
so the draws for e.g. (trajectory i, layer k) do not depend on the order in
which streams are created or on how work is split across threads.
"""

import numpy as np


def substream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    if seed is None:
        raise ValueError("seed must be an integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *key):
    """Derive a 63-bit integer seed for a child task (e.g. a backtest sample)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
