"""Counter-based substream construction shared across the package.

Keying a Philox generator by (seed, *tags) gives independent, reproducible
streams whose draws do not depend on evaluation order or worker scheduling.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key))))
