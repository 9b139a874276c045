"""Keyed random streams.

Every stream is a Philox (counter-based) generator derived from the master
seed plus a key path, so a per-series or per-batch stream never depends on how
many draws other streams made or on scheduling order.
"""

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
