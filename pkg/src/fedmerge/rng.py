"""Deterministic random-stream derivation.

Every source of randomness in the simulator is a fresh ``numpy`` generator
derived from ``(master seed, purpose tag, *path ints)`` through
``SeedSequence``. Streams are therefore pure functions of their coordinates:
two calls with the same coordinates yield identical draws regardless of call
order, thread scheduling, or how many other streams were consumed in between.
"""

import numpy as np

# Purpose tags namespace the streams so e.g. (seed, client) used for negative
# sampling can never collide with (seed, client) used for LDP noise.
_PURPOSES = {
    "server_init": 0,
    "client_init": 1,
    "adapter_init": 2,
    "eval_negatives": 3,
    "train_negatives": 4,
    "shuffle": 5,
    "ldp": 6,
    "sketch": 7,
    "participation": 8,
    "probe": 9,
}


def stream(seed: int, purpose: str, *path: int) -> np.random.Generator:
    """Return the generator for the given (seed, purpose, *path) coordinates."""
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose: {purpose!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng((seed, _PURPOSES[purpose]) + tuple(path))
