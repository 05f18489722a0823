"""Keyed, order-independent random generators.

Every stochastic stage in the package derives its generator from a string key
through a counter-based PRNG (Philox), so results for one clip never depend on
how many other clips were processed first or on which thread handled them.
"""

from __future__ import annotations

import hashlib

import numpy as np


def keyed_rng(*parts) -> np.random.Generator:
    """Return a Generator keyed by the given parts (hashed, order-sensitive)."""
    material = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
