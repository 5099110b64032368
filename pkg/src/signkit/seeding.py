"""Deterministic RNG derivation from a base seed plus string/int labels."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_rng(*parts) -> np.random.Generator:
    """Independent generator keyed by the (seed, label, ...) tuple."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))
