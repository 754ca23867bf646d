"""Keyed random substreams.

Every stochastic choice in a run draws from a ``random.Random`` seeded by a
hash of the run seed and a tuple of string keys, so a draw depends only on
what it is for, never on how many draws happened before it.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, *keys: object) -> int:
    material = "\x1f".join([str(int(seed)), *(str(k) for k in keys)])
    return int.from_bytes(hashlib.sha256(material.encode()).digest()[:8], "big")


def substream(seed: int, *keys: object) -> random.Random:
    return random.Random(derive_seed(seed, *keys))
