"""Content addressing for candidate solutions.

One hash function end-to-end: stagnation detection, the deduplicated
solution store, and manifest rows all use the same digest, so a hash match
in any of them means the stored texts are byte-identical.
"""

from __future__ import annotations

import hashlib


def solution_hash(text: str) -> str:
    """SHA-256 hex digest of a candidate solution text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
