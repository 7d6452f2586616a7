"""Deterministic RNG derivation.

Every random choice in the pipeline flows from one root seed. Stage- and
instance-level generators are derived by hashing the root seed together
with a stable string key, so the outputs do not depend on processing
order or worker scheduling.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(root: int, *key: object) -> int:
    """Stable 64-bit seed from a root seed and a structured key."""
    material = "\x1f".join([str(root), *[str(k) for k in key]])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(root: int, *key: object) -> random.Random:
    return random.Random(derive_seed(root, *key))
