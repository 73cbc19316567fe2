"""Deterministic random streams derived from structured keys.

Every stochastic component (corpus generation, parameter init, dropout,
shuffling, triple sampling) draws from its own counter-based stream keyed
by the values that identify the draw site. Streams are independent of
call order and of each other, which keeps parallel/serial execution and
repeated runs bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def key_rng(*parts) -> np.random.Generator:
    """Philox generator keyed by a stable hash of ``parts``.

    The same parts always produce the same stream; ints and strings are
    both fine as parts.
    """
    raw = "/".join(repr(p) for p in parts).encode()
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stable_bits(tag: str, n: int) -> np.ndarray:
    """n values in {-0.5, +0.5} derived from a hash of ``tag``."""
    digest = hashlib.blake2b(tag.encode(), digest_size=max(1, (n + 7) // 8)).digest()
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:n]
    return bits.astype(np.float64) - 0.5
