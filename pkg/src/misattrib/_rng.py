from __future__ import annotations

import hashlib

import numpy as np


def _key_word(key: object) -> int:
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    """Independent generator for the stream named by ``keys`` under ``seed``.

    Streams are keyed by content (e.g. an author id), not by call order, so a
    result never depends on the order in which items are visited.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    words = [int(seed)] + [_key_word(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))
