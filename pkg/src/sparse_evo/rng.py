"""Counter-based seed derivation.

A single master seed fans out into independent named streams so that an
ablation can change one source of randomness without disturbing the
others. Stream ``name`` with extra counters ``c1, c2, ...`` is

    Generator(PCG64(SeedSequence(master, spawn_key=(STREAMS[name], c1, c2, ...))))

The integer ids below are part of the reproducibility contract; never
renumber them.
"""

import numpy as np

STREAMS = {
    "init": 0,
    "es": 1,
    "data": 2,
    "baselines": 3,
    "directions": 4,
    "eval": 5,
    "subset": 6,
    "test_episodes": 7,
}


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    try:
        key = (STREAMS[name],) + tuple(int(c) for c in counters)
    except KeyError:
        raise KeyError(f"unknown RNG stream {name!r}") from None
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
