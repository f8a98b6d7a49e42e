"""Named random streams derived from one master seed.

Every source of randomness in a scenario pulls from a stream named by a
purpose tag plus identifying integers (actor ids, round numbers).  Streams
are independent of call order and of each other, which is what makes runs
byte-for-byte reproducible and lets an auditor re-derive any single
miner's training noise without replaying the whole scenario.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *tags: object) -> int:
    """Collapse (master_seed, tags...) into a 64-bit stream seed.

    Tags may be ints or strings; the byte encoding is injective so
    ("a", 1) and ("a1",) never collide.
    """
    h = hashlib.sha256()
    h.update(int(master_seed & _MASK64).to_bytes(8, "big"))
    for tag in tags:
        if isinstance(tag, bool):
            raise TypeError("bool tags are ambiguous")
        if isinstance(tag, int):
            h.update(b"i")
            h.update(int(tag & _MASK64).to_bytes(8, "big"))
        elif isinstance(tag, str):
            raw = tag.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "big"))
            h.update(raw)
        else:
            raise TypeError(f"unsupported tag type {type(tag)!r}")
    return int.from_bytes(h.digest()[:8], "big")


def stream(master_seed: int, *tags: object) -> np.random.Generator:
    """Return the generator for the named stream."""
    return np.random.default_rng(derive_seed(master_seed, *tags))
