"""Probes for the metadata lookup path: timing and bulk allocation."""
import time

import numpy as np

from .._jit import jit
from ..allocator import malloc_kernel
from ..layout import P_HEAP_BASE
from ..small import classify


@jit
def lookup_loop(st, addrs, calls):
    """Classify ``addrs`` round-robin *calls* times; returns a checksum."""
    base = st.params[P_HEAP_BASE]
    n = addrs.shape[0]
    acc = 0
    for i in range(calls):
        code, h, t, c, idx = classify(st, addrs[i % n] - base)
        acc += idx + code
    return acc


@jit
def allocate_many(st, t, size, out):
    """Fill *out* with fresh allocations of *size* bytes; returns failures."""
    failed = 0
    for i in range(out.shape[0]):
        out[i] = malloc_kernel(st, t, size)
        if out[i] <= 0:
            failed += 1
    return failed


def time_lookups(alloc, addrs, calls, repeat=3):
    """Best-of-*repeat* wall time of *calls* lookups over *addrs*."""
    addrs = np.asarray(addrs, dtype=np.int64)
    lookup_loop(alloc.state, addrs, 1)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        lookup_loop(alloc.state, addrs, calls)
        best = min(best, time.perf_counter() - t0)
    return best
