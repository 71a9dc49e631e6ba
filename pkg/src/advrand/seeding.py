"""Counter-based seed derivation.

A single master seed expands into independent streams by hashing
``(master, *keys)`` with the splitmix64 finalizer. Keys may be integers or
short strings; strings are folded in byte by byte so the layout is easy to
reproduce in other languages.

    derive_seed(7, "render", 3, 0)  ->  uint64 seed for render stream 3/0
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _key_words(key) -> list[int]:
    if isinstance(key, str):
        # length prefix keeps "ab","c" distinct from "a","bc"
        return [len(key)] + list(key.encode("utf-8"))
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("boolean seed keys are ambiguous; use an int")
    return [int(key) & _MASK]


def derive_seed(master: int, *keys) -> int:
    """Return a 64-bit seed deterministically derived from ``master`` and ``keys``."""
    h = splitmix64(int(master) & _MASK)
    for key in keys:
        for word in _key_words(key):
            h = splitmix64(h ^ word)
    return h


def make_rng(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
