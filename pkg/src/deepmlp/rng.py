"""Seeded substream derivation for reproducible parallel pipelines.

Every random choice in a run hangs off one 64-bit seed. Named substreams
are addressed by an integer path, e.g. (STREAM_DEFORM, epoch, image_index),
mixed into a 128-bit Philox key with a splitmix64 chain. Philox is
counter-based, so results are identical across platforms and independent
of how work is split across parallel lanes.
"""

import numpy as np

STREAM_INIT = 1
STREAM_DEFORM = 2
STREAM_SHUFFLE = 3

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: int) -> int:
    """One splitmix64 scrambling step on a 64-bit word."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def stream_key(seed: int, *path: int) -> tuple[int, int]:
    """Mix (seed, *path) into the two 64-bit words of a Philox key."""
    h = _splitmix64(seed & _MASK64)
    for p in path:
        h = _splitmix64(h ^ (p & _MASK64))
    return h, _splitmix64(h)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one (seed, *path) address."""
    key = np.array(stream_key(seed, *path), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
