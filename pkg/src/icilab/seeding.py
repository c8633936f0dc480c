"""Deterministic derivation of independent random streams from one seed.

Every source of randomness in the package flows from a single integer seed
through named streams, so that adding or removing one consumer (for example
disabling a loss term) never shifts the draws seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def seed_sequence(seed: int, *tags) -> np.random.SeedSequence:
    """SeedSequence for the stream named by `tags`, derived from `seed`."""
    return np.random.SeedSequence([int(seed)] + [_tag_to_int(t) for t in tags])


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream named by `tags`, derived from `seed`."""
    return np.random.default_rng(seed_sequence(seed, *tags))


def derive_int(seed: int, *tags) -> int:
    """Deterministic derived integer seed for the stream named by `tags`."""
    return int(seed_sequence(seed, *tags).generate_state(1, np.uint64)[0])
