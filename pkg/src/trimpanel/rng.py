"""Counter-based random streams.

A stream is a Philox4x32 generator whose key is derived from ``(seed, *keys)``
through :class:`numpy.random.SeedSequence`.  The draw index is Philox's own
counter, so the values a replication sees depend only on its key, never on
which worker ran it or in what order.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
