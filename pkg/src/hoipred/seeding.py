"""Deterministic derivation of named sub-seeds from a single root seed."""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(root: int, name: str) -> int:
    """Derive a stable 64-bit seed for a named random stream.

    Every component that needs randomness (splitting, initialization,
    negative sampling, candidate sampling) takes its seed from the run's
    root seed through this function. Streams stay independently
    reproducible no matter which components run, in what order, or with
    which model variant, because the derivation depends only on the root
    seed and the stream name.
    """
    digest = hashlib.sha256(f"{int(root)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
