"""Deterministic seed derivation for independent simulation substreams.

Every random decision in the simulator draws from a generator seeded by a
value derived from (master seed, purpose tag, index...).  Substreams are
therefore independent of execution order and of each other, which keeps
clip-level parallelism and repeated runs bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | str) -> int:
    """Map a (master seed, tag, index, ...) tuple to a 64-bit sub-seed."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts: int | str) -> np.random.Generator:
    """Fresh generator for the substream identified by ``parts``."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(*parts)))
