"""Key pre-hashing and the per-row hash family."""
import hashlib
import numbers
import random

from .kernels import splitmix64

MASK64 = (1 << 64) - 1


def key64(key):
    """Map an item identifier to 64 bits.

    Integers that fit in 64 bits go through splitmix64; strings, bytes and
    wider integers through an 8-byte blake2b digest.
    """
    if isinstance(key, numbers.Integral) and not isinstance(key, bool):
        k = int(key)
        if -(1 << 63) <= k <= MASK64:
            return splitmix64(k & MASK64)
        key = str(k)
    if isinstance(key, str):
        key = key.encode("utf-8")
    elif not isinstance(key, (bytes, bytearray, memoryview)):
        raise TypeError(f"unhashable key type {type(key).__name__}")
    return int.from_bytes(hashlib.blake2b(bytes(key), digest_size=8).digest(), "little")


def row_seeds(seed, depth):
    """Multiply-shift parameters ``(mults, adds)`` for ``depth`` rows.

    Derived only from ``seed``, so equal seeds mean identical hash functions.
    """
    rng = random.Random(f"ecm-rows:{seed}")
    mults = [rng.getrandbits(64) | 1 for _ in range(depth)]
    adds = [rng.getrandbits(64) for _ in range(depth)]
    return mults, adds
