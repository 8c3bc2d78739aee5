"""Deterministic seed derivation.

One root seed fans out to every random stream (weight init, per-layer
factorization, batch shuffling, data splits) through a fixed hash mix, so a
single integer reproduces an entire run.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels: str | int) -> int:
    """Mix ``root`` with a label path into an independent 63-bit seed.

    The same (root, labels) pair always yields the same seed; distinct label
    paths yield streams that are independent for practical purposes.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    # Keep it non-negative so it is valid for np.random.default_rng.
    return int.from_bytes(h.digest()[:8], "little") >> 1
