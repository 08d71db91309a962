"""Deterministic, named random streams derived from a single experiment seed.

Every stochastic step of the pipeline (graph sampling, weight sampling,
noise draws, ...) pulls its own counter-based stream keyed on
``(seed, purpose, index)``. Streams are independent of each other and of
host parallelism, so regenerating with the same seed is byte-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_seed"]


def _key_words(purpose: str, index: tuple[int, ...]) -> list[int]:
    # Hash the purpose string so distinct names can never collide by prefix.
    h = hashlib.sha256(purpose.encode("utf-8")).digest()
    words = [int.from_bytes(h[:8], "little")]
    words.extend(int(i) & 0xFFFFFFFFFFFFFFFF for i in index)
    return words


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Return a fresh Philox-backed generator for the named stream."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                spawn_key=tuple(_key_words(purpose, index)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, purpose: str, *index: int) -> int:
    """Collapse a named stream into a single 63-bit integer seed.

    Used to hand deterministic sub-seeds to libraries that take a plain
    integer (e.g. torch).
    """
    return int(stream(seed, purpose, *index).integers(0, 2**63 - 1))
