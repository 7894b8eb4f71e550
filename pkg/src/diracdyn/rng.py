"""Seeded, splittable random streams.

Every random draw in the package comes from ``stream(seed, *keys)``: a
Philox counter generator keyed by one 64-bit seed plus a spawn path, so
sub-tasks get independent streams that do not depend on execution order.
"""

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
