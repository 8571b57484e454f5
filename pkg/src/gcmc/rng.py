"""Deterministic random-stream derivation.

All samplers draw from Philox (counter-based) generators keyed by the master
seed plus a structural key, e.g. one stream per data block or per SMC step.
Workers that process blocks or particles concurrently therefore consume
exactly the random numbers a serial run would, and results are reproducible
bit-for-bit for a given seed regardless of execution order.
"""

from __future__ import annotations

import numpy as np

# Stream namespaces; keep values stable, they are part of the output contract.
GIBBS_BLOCK = 0
GIBBS_GLOBAL = 1
GIBBS_INIT = 2
SMC_INIT = 3
SMC_STEP = 4
SUBPOSTERIOR = 5
DIRECT_CHAIN = 6
DATA_SYNTH = 7


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator for `key` under the master `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
