"""Counter-based random streams keyed by (seed, purpose, worker, round).

Every random draw in a run comes from a stream that depends only on these
four integers, so serial and parallel execution see the same numbers no
matter how work is scheduled.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "sample": 0,     # minibatch indices
    "compress": 1,   # compressor draws
    "anchor": 2,     # L-SVRG anchor coin
    "init": 3,       # starting point
    "verify": 4,     # Monte Carlo checks
    "fit": 5,        # empirical certificate fits
}


def stream(seed: int, purpose: str, worker: int = 0, round: int = 0) -> np.random.Generator:
    if worker < 0 or round < 0:
        raise ValueError("worker and round must be non-negative")
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1),
                                spawn_key=(PURPOSES[purpose], int(worker), int(round)))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Factory bound to one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, purpose: str, worker: int = 0, round: int = 0) -> np.random.Generator:
        return stream(self.seed, purpose, worker, round)
