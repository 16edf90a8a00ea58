"""Named random streams derived from a single root seed.

Each consumer (network init, epoch shuffling, sampling, data generation) gets
its own independent stream so changing one does not perturb the others.
"""

import numpy as np

STREAMS = {"init": 0, "shuffle": 1, "sample": 2, "data": 3}


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return the generator for stream ``name`` (sub-stream ``index``) of ``seed``."""
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}; expected one of {sorted(STREAMS)}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], int(index)))
    return np.random.Generator(np.random.PCG64(seq))
