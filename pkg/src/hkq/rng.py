"""Seed derivation and random streams.

Every sub-stream (one envelope set, one noise pass, one weight draw) gets its
own 64-bit seed derived from the master seed plus a tuple of keys, so results
never depend on how work is split across threads.

The mixing function is BLAKE2b with an 8-byte digest over the UTF-8 encoding
of ``"<master>|<key1>|<key2>|..."``; the digest is read little-endian.
Streams are numpy ``Generator`` objects over the counter-based Philox bit
generator.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(master, *keys):
    """Mix a master seed and any number of keys into a new 64-bit seed."""
    text = "|".join([str(int(master) & MASK64)] + [str(k) for k in keys])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed):
    return np.random.Generator(np.random.Philox(int(seed) & MASK64))
