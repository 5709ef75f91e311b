"""Deterministic derivation of child RNG streams from a single base seed.

All randomness in the package flows from one 64-bit base seed. Replications,
fixed-point iterations and worker shards each get an independent stream
derived from (base_seed, key...) through numpy's SeedSequence, so results do
not depend on scheduling or worker count.
"""

from __future__ import annotations

import random

import numpy as np

from .errors import ConfigError

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed <= MAX_SEED):
        raise ConfigError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return seed


def derive_seed(base_seed: int, *key: int) -> int:
    """Stable 64-bit child seed for (base_seed, key)."""
    ss = np.random.SeedSequence(entropy=check_seed(base_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_stream(base_seed: int, *key: int) -> random.Random:
    """Independent Mersenne Twister stream for (base_seed, key)."""
    return random.Random(derive_seed(base_seed, *key))
