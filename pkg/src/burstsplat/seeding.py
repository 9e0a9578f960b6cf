"""Deterministic seed derivation.

Every random draw in the project flows from a root seed plus a path of keys
(strings or ints), so any batch, noise field, or scene can be regenerated in
isolation. String keys go through sha256 because builtin hash() is salted
per process.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root, *keys) -> int:
    """Stable 63-bit seed from a root seed and a key path."""
    seq = np.random.SeedSequence([_key_to_int(root)] + [_key_to_int(k) for k in keys])
    return int(seq.generate_state(1, np.uint64)[0]) & _MASK


def derive_rng(root, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
