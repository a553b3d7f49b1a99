"""Counter-based random numbers.

Every draw is a pure function of a key tuple, so any sub-stream can be
regenerated on demand without carrying generator state around. The mixer is
the splitmix64 finalizer applied once per key word.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream tags keep unrelated consumers of the same seed apart
TAG_ENV = 1
TAG_GLAUBER = 2
TAG_BLOCK = 3
TAG_SW = 4
TAG_CFTP = 5


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def absorb(state, word):
    return mix64(state + _GOLDEN + np.uint64(word))


@njit(cache=True)
def key2(a, b):
    return absorb(absorb(np.uint64(0), a), b)


@njit(cache=True)
def key3(a, b, c):
    return absorb(key2(a, b), c)


@njit(cache=True)
def key4(a, b, c, d):
    return absorb(key3(a, b, c), d)


@njit(cache=True, inline="always")
def to_unit(z):
    """Top 53 bits of ``z`` as a double in [0, 1)."""
    return float(z >> _S11) * _INV53


@njit(cache=True)
def uniform4(a, b, c, d):
    return to_unit(key4(a, b, c, d))


@njit(cache=True)
def uniform5(a, b, c, d, e):
    return to_unit(absorb(key4(a, b, c, d), e))


@njit(cache=True)
def _uniform_array(seed, tag, ids, counter):
    out = np.empty(ids.shape[0])
    for i in range(ids.shape[0]):
        out[i] = to_unit(key4(seed, tag, ids[i], counter))
    return out


def uniforms(seed, tag, ids, counter=0):
    """Vectorised ``U(seed, tag, id, counter)`` for an int64 array of ids."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    return _uniform_array(np.int64(seed), np.int64(tag), ids, np.int64(counter))


def derive_seed(*words):
    """Fold integers into a single non-negative 63-bit seed."""
    z = np.uint64(0)
    for w in words:
        z = np.uint64(absorb(z, np.int64(w)))
    return int(z >> np.uint64(1))
