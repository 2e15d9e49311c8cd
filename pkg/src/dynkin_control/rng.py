"""Counter-based Gaussian streams.

Every path owns an independent SplitMix64 stream keyed by ``(seed, path)``.
Word ``k`` of a stream is a pure function of the key and ``k``, so any
subset of paths can be generated in any order, chunked or not, with the
same result.
"""
import numpy as np
from numba import njit, uint64

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 2.0 * np.pi
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def path_key(seed, path):
    return mix64(uint64(seed) ^ mix64(uint64(path) + GOLDEN))


@njit(cache=True, inline="always")
def word(key, k):
    return mix64(key + (uint64(k) + uint64(1)) * GOLDEN)


@njit(cache=True, inline="always")
def normal(key, counter):
    """Standard normal number ``counter`` of the stream (Box–Muller, one branch)."""
    w1 = word(key, uint64(2) * uint64(counter))
    w2 = word(key, uint64(2) * uint64(counter) + uint64(1))
    u1 = (float(w1 >> uint64(11)) + 1.0) * _INV53
    u2 = float(w2 >> uint64(11)) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


@njit(cache=True)
def _normals(seed, paths, counter, out):
    for i in range(paths.shape[0]):
        out[i] = normal(path_key(seed, paths[i]), counter)


def normals(seed, paths, counter):
    """Normal number ``counter`` for each path index in ``paths``."""
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    out = np.empty(paths.shape[0])
    _normals(np.uint64(seed % 2**64), paths, np.int64(counter), out)
    return out
