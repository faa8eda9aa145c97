"""Deterministic random-stream derivation.

Every stochastic routine takes a master seed plus a tuple of integer or
string tags (replica index, epsilon index, purpose, ...) and derives an
independent generator from them.  Streams are reproducible across runs and
machines for a fixed numpy major version, and distinct tag tuples give
statistically independent streams (SeedSequence keying).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "tag_to_int"]


def tag_to_int(tag: "int | str") -> int:
    """Map a stream tag to a stable 64-bit integer.

    Integers pass through; strings hash via sha256 so the mapping does not
    depend on the process hash seed.
    """
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    digest = hashlib.sha256(tag.encode("utf8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *tags: "int | str") -> np.random.Generator:
    """Derive an independent Generator from a master seed and tag tuple."""
    key = [tag_to_int(seed)] + [tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(key))
