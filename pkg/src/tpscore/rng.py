"""SplitMix64, in scalar and vectorized form.

The generator state advances by the golden-ratio increment and each output is
the finalizer applied to the state, so the i-th output (1-based) of a stream
seeded with ``s`` is ``mix(s + i * GAMMA)``. That makes the stream
counter-based: any block of outputs can be produced directly with numpy, which
is what the bootstrap and the synthetic generators rely on.

Child streams are keyed by ``substream(seed, k1, k2, ...)``: each step replaces
the seed by the ``k + 1``-th output of the current stream.
"""

from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Scalar reference generator."""

    def __init__(self, seed):
        self.state = int(seed) & MASK

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK
        return mix64(self.state)

    def next_double(self):
        return (self.next_u64() >> 11) * _INV_2_53

    def next_below(self, n):
        return int(self.next_double() * n)


def substream(seed, *path):
    s = int(seed) & MASK
    for k in path:
        s = mix64(s + (int(k) + 1) * GAMMA)
    return s


def _mix64_array(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def u64_block(seeds, count):
    """Outputs 1..count of each seed's stream, shape ``(len(seeds), count)``."""
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 1)
    steps = (np.arange(1, count + 1, dtype=np.uint64) * np.uint64(GAMMA)).reshape(1, -1)
    with np.errstate(over="ignore"):
        return _mix64_array(seeds + steps)


def uniform_block(seeds, count):
    """Doubles in [0, 1) with 53 random bits, matching :meth:`SplitMix64.next_double`."""
    return (u64_block(seeds, count) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def index_block(seeds, count, n):
    """Integers in [0, n), matching :meth:`SplitMix64.next_below`."""
    return (uniform_block(seeds, count) * n).astype(np.int64)
