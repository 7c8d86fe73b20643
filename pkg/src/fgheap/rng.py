"""Per-thread xoroshiro128** streams.

Each allocator thread owns one row of a ``(max_threads, 2)`` uint64 state
array; nothing here synchronizes, so a row must only ever be advanced by
its owner.
"""
import numpy as np

from ._jit import inline, jit

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x):
    """One splitmix64 step on a Python int; returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def seed_states(seed, n_threads):
    """Initial states for *n_threads* streams derived from ``seed ^ thread``."""
    states = np.empty((n_threads, 2), dtype=np.uint64)
    for t in range(n_threads):
        s, a = splitmix64((seed ^ t) & MASK64)
        s, b = splitmix64(s)
        if a == 0 and b == 0:
            b = 1
        states[t, 0] = a
        states[t, 1] = b
    return states


@inline
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@inline
def rng_next(states, t):
    s0 = states[t, 0]
    s1 = states[t, 1]
    result = _rotl(s0 * np.uint64(5), 7) * np.uint64(9)
    s1 ^= s0
    states[t, 0] = _rotl(s0, 24) ^ s1 ^ (s1 << np.uint64(16))
    states[t, 1] = _rotl(s1, 37)
    return result


@jit
def rng_fill(states, t, out):
    for i in range(out.shape[0]):
        out[i] = rng_next(states, t)


def stream(seed, thread_index, n):
    """First *n* outputs of one thread's stream, as a uint64 array."""
    states = seed_states(seed, thread_index + 1)
    out = np.empty(n, dtype=np.uint64)
    rng_fill(states, thread_index, out)
    return out
