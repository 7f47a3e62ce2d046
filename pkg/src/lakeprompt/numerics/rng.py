"""Seeded, platform-independent random streams (Philox counter-based)."""
import hashlib

import numpy as np


def derive_seed(*parts):
    """Stable 64-bit seed from any mix of ints and strings."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def make_rng(*parts):
    """Philox generator keyed by ``parts``; equal parts give equal streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(derive_seed(*parts))))
