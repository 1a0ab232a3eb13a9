"""Counter-based random streams for compiled kernels.

Every stream is a single 64-bit SplitMix64 state held in a length-1
``uint64`` array. Streams are never shared: a replica gets
``replica_key(seed, index)`` and each particle of a tree gets
``child_key(parent_key, i)``, so results depend only on the seed and the
genealogy, not on scheduling.
"""

import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_SALT = np.uint64(0xD1B54A32D192ED03)
_TWO53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def replica_key(seed, index):
    return mix64(mix64(np.uint64(seed) ^ _SALT) + np.uint64(index + 1) * GOLDEN)


@njit(cache=True)
def child_key(parent, i):
    return mix64(parent ^ mix64(np.uint64(i + 1) * _SALT))


@njit(cache=True)
def next_u64(st):
    st[0] += GOLDEN
    return mix64(st[0])


@njit(cache=True)
def uniform(st):
    """Uniform on the open interval (0, 1)."""
    return (float(next_u64(st) >> _S11) + 0.5) * _TWO53


@njit(cache=True)
def exponential(st, rate):
    return -math.log(uniform(st)) / rate


@njit(cache=True)
def normal(st):
    # Box-Muller, one variate per call keeps the stream position-free
    u1 = uniform(st)
    u2 = uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def discrete(st, cdf):
    u = uniform(st)
    k = 0
    n = cdf.shape[0]
    while k < n - 1 and u > cdf[k]:
        k += 1
    return k


def new_state(key) -> np.ndarray:
    return np.array([key], dtype=np.uint64)


def seed_to_uint(seed: int) -> np.uint64:
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
