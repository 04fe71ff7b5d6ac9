"""Deriving child seeds from one root seed by labeled hashing.

Every source of randomness in a run flows from a single root seed; each
consumer gets its own stream via a purpose label ("model", "lift",
"sft/epoch/3", ...). Labels namespace the streams, so e.g. SFT corpus
documents ("sft/doc/0") can never collide with held-out test documents
("test/doc/0") even under the same root seed.
"""

from __future__ import annotations

import hashlib

_MASK63 = (1 << 63) - 1


def derive_seed(root: int, label: str) -> int:
    """Stable, collision-resistant child seed for (root, label)."""
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63
