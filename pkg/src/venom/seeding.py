"""Deterministic seed derivation.

Every random draw in the pipeline flows from one root seed expanded by
stage labels, so independent stages get independent streams while the
whole run stays reproducible across processes and platforms.
"""

import hashlib

import numpy as np


def derive_seed(root: int, *labels) -> int:
    """Derive a child seed from a root seed and a label path.

    Stable across processes: uses blake2b over the decimal root and the
    stringified labels, nothing interpreter-dependent.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode("utf-8"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def rng_for(root: int, *labels) -> np.random.Generator:
    """Generator seeded by derive_seed(root, *labels)."""
    return np.random.default_rng(derive_seed(root, *labels))
