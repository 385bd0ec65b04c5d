"""Seedable, named random-number streams.

Every stochastic operation in the package draws from a stream derived from
a 64-bit master seed plus a tuple of string/int tags (the stream "name").
Derivation goes through ``numpy.random.SeedSequence`` so streams with
different names are statistically independent, and the same
(seed, tags) pair always yields the same stream on any platform.

Namespace convention: the first tag is a coarse namespace such as
"dataset", "eval", or "ase", which keeps training and evaluation data
on provably disjoint streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _tag_words(tag) -> tuple[int, ...]:
    """Encode one tag as a tuple of uint32 words for a spawn key."""
    if isinstance(tag, (int, np.integer)):
        v = int(tag)
        if v < 0:
            raise ValueError(f"stream tags must be non-negative, got {tag}")
        words = []
        while True:
            words.append(v & _MASK32)
            v >>= 32
            if v == 0:
                return tuple(words)
    if isinstance(tag, str):
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    raise TypeError(f"stream tags must be str or int, got {type(tag)!r}")


def seed_sequence(master_seed: int, *tags) -> np.random.SeedSequence:
    """Build the SeedSequence for the stream named by ``tags``."""
    key: list[int] = []
    for tag in tags:
        key.extend(_tag_words(tag))
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(key))


def stream(master_seed: int, *tags) -> np.random.Generator:
    """Return the Generator for the named stream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *tags)))


def derive_seed(master_seed: int, *tags) -> int:
    """Collapse a named stream to a single 63-bit seed (for provenance records)."""
    state = seed_sequence(master_seed, *tags).generate_state(2, dtype=np.uint32)
    return (int(state[0]) | (int(state[1]) << 32)) & 0x7FFFFFFFFFFFFFFF
