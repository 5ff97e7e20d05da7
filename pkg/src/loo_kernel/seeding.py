"""Stable sub-seed derivation."""

import hashlib

import numpy as np


def derive_seed(seed: int, *parts) -> int:
    """Hash ``(seed, *parts)`` into a 63-bit integer seed.

    The result depends only on the string forms of the arguments, so it is
    stable across processes and Python versions (unlike ``hash``).
    """
    key = "|".join([str(int(seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
