"""Deterministic seed derivation.

Every random draw in the toolkit flows through a single root seed.  Child
seeds are derived as ``child_seed(root, label)`` where ``label`` names the
purpose (e.g. ``"shuffle.3"`` for the epoch-3 shuffle).  The derivation is
a SHA-256 digest of ``"{root}/{label}"``, so it is stable across platforms
and Python processes (unlike ``hash()``).
"""

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def child_seed(root: int, label: str) -> int:
    """Derive a 63-bit child seed from a root seed and a purpose label."""
    digest = hashlib.sha256(f"{root}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def rng(root: int, label: str = "") -> np.random.Generator:
    """A PCG64 generator seeded from ``child_seed(root, label)``."""
    seed = child_seed(root, label) if label else int(root)
    return np.random.Generator(np.random.PCG64(seed))
