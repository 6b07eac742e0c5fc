"""Keyed, counter-based random streams.

Every random quantity in the package is drawn from a Philox stream whose key
is ``(seed, stream_id)``.  A stream id packs a namespace tag and an index, so
draws for one edge, one Poisson clock or one replica never depend on the order
in which other streams are consumed.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# namespace tags (top 16 bits of the stream id)
EDGE_SIGNS = 1
EVENTS = 2
WALK = 3
COUPLING = 4
BATCH = 5
CANONICAL = 6
COALESCE = 7

_INDEX_BITS = 48


def stream_id(namespace: int, index: int) -> int:
    if not 0 <= index < (1 << _INDEX_BITS):
        raise ValueError(f"stream index out of range: {index}")
    return (namespace << _INDEX_BITS) | index


def keyed_rng(seed: int, namespace: int, index: int = 0) -> np.random.Generator:
    """Generator for the stream ``(seed, namespace, index)``."""
    key = np.array([seed & MASK64, stream_id(namespace, index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *path: int) -> int:
    """64-bit child seed for replica/block ``path`` under ``seed``."""
    ss = np.random.SeedSequence(seed & MASK64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class RawStreams:
    """Fast access to many short keyed uniform streams.

    Re-keys a single Philox bit generator instead of constructing one object
    per stream; the output is identical to ``keyed_rng(seed, ns, i)`` raw draws.
    """

    def __init__(self, seed: int, namespace: int):
        self.seed = seed & MASK64
        self.namespace = namespace
        self._bitgen = np.random.Philox(key=np.array([self.seed, 0], dtype=np.uint64))
        self._index = None

    def open(self, index: int) -> None:
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.zeros(4, dtype=np.uint64),
                "key": np.array([self.seed, stream_id(self.namespace, index)], dtype=np.uint64),
            },
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        self._index = index

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) continuing the currently open stream."""
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def exponentials(self, n: int) -> np.ndarray:
        return -np.log1p(-self.uniforms(n))
