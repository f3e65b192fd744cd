"""Stable hashing and counter-based draws.

Everything here is a pure function of its keys, so repeated or concurrent
calls agree bit for bit and no generator state is shared between callers.
"""

from __future__ import annotations

import hashlib

from scipy.special import ndtri

_MASK64 = (1 << 64) - 1


def stable_hash64(*keys: object) -> int:
    """64-bit blake2b digest of the ``repr``-joined keys."""
    payload = "\x1f".join(repr(k) for k in keys).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def hash_uniform(*keys: object) -> float:
    """Uniform draw on the open interval (0, 1) addressed by ``keys``."""
    h = stable_hash64(*keys)
    # top 53 bits, shifted half a step away from 0 and 1
    return ((h >> 11) + 0.5) / float(1 << 53)


def hash_normal(*keys: object) -> float:
    """Standard normal draw addressed by ``keys`` (inverse-CDF of :func:`hash_uniform`)."""
    return float(ndtri(hash_uniform(*keys)))


def child_seed(master_seed: int, index: int, label: str = "") -> int:
    """Derive an independent 64-bit seed for trial ``index`` of a run."""
    return stable_hash64("child", int(master_seed) & _MASK64, int(index), str(label))
