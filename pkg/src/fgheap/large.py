"""Large objects: one private mapping per allocation, unmapped on free.

Live mappings are tracked in an open-addressing table (linear probing,
backward-shift deletion) keyed by base address, so validation and unmap
stay O(1) without a Python dict on the hot path.  A bounded ring of
recently unmapped bases lets a second free of the same object be told
apart from a wild pointer.
"""
from ._jit import inline
from ._native import MAP_FAILED, mutex_lock, mutex_unlock, sys_mmap, sys_munmap
from ._state import (
    LARGE_HISTORY, M_COUNT, M_HIST0, M_HIST_POS, S_LARGE_ALLOCS, S_LARGE_FREES, S_MAP,
    S_UNMAP, S_VIOL0, V_OK, V_OUTSIDE, V_UNKNOWN_LARGE,
)
from .layout import P_LARGE_CAP, P_LARGE_LOCK, P_PAGE_SHIFT

LARGE_CAPACITY = 1 << 16


@inline
def _home(base, mask):
    b = base >> 12
    return (b ^ (b >> 7) ^ (b >> 17)) & mask


@inline
def table_find(keys, base):
    mask = keys.shape[0] - 1
    i = _home(base, mask)
    while keys[i] != 0:
        if keys[i] == base:
            return i
        i = (i + 1) & mask
    return -1


@inline
def table_insert(keys, vals, base, length, requested):
    mask = keys.shape[0] - 1
    i = _home(base, mask)
    while keys[i] != 0:
        i = (i + 1) & mask
    keys[i] = base
    vals[i, 0] = length
    vals[i, 1] = requested


@inline
def table_delete(keys, vals, i):
    mask = keys.shape[0] - 1
    keys[i] = 0
    j = i
    while True:
        j = (j + 1) & mask
        if keys[j] == 0:
            return
        home = _home(keys[j], mask)
        # move j back into the hole unless its home lies cyclically in (i, j]
        if (j > i and (home <= i or home > j)) or (j < i and home <= i and home > j):
            keys[i] = keys[j]
            vals[i, 0] = vals[j, 0]
            vals[i, 1] = vals[j, 1]
            keys[j] = 0
            i = j


@inline
def _interior(keys, vals, addr):
    for i in range(keys.shape[0]):
        if keys[i] != 0 and keys[i] < addr < keys[i] + vals[i, 0]:
            return True
    return False


@inline
def _recently_freed(meta, addr):
    for i in range(LARGE_HISTORY):
        if meta[M_HIST0 + i] == addr:
            return True
    return False


@inline
def mapped_length(p, request):
    shift = p[P_PAGE_SHIFT]
    return ((request + (1 << shift) - 1) >> shift) << shift


@inline
def large_allocate(st, t, request):
    p = st.params
    length = mapped_length(p, request)
    base = sys_mmap(length)
    if base == MAP_FAILED:
        return 0
    lock = p[P_LARGE_LOCK]
    mutex_lock(lock)
    if st.large_meta[M_COUNT] >= (p[P_LARGE_CAP] * 3) // 4:
        mutex_unlock(lock)
        sys_munmap(base, length)
        return 0
    table_insert(st.large_keys, st.large_vals, base, length, request)
    st.large_meta[M_COUNT] += 1
    mutex_unlock(lock)
    st.stats[t, S_MAP] += 1
    st.stats[t, S_LARGE_ALLOCS] += 1
    return base


@inline
def large_lookup(st, addr):
    """Mapped length of the live large object based at *addr*, or -1."""
    lock = st.params[P_LARGE_LOCK]
    mutex_lock(lock)
    i = table_find(st.large_keys, addr)
    length = -1 if i < 0 else st.large_vals[i, 0]
    mutex_unlock(lock)
    return length


@inline
def large_free(st, t, addr):
    p = st.params
    lock = p[P_LARGE_LOCK]
    mutex_lock(lock)
    i = table_find(st.large_keys, addr)
    if i < 0:
        known = _interior(st.large_keys, st.large_vals, addr) or _recently_freed(st.large_meta, addr)
        mutex_unlock(lock)
        code = V_UNKNOWN_LARGE if known else V_OUTSIDE
        st.stats[t, S_VIOL0 + code] += 1
        return code
    length = st.large_vals[i, 0]
    table_delete(st.large_keys, st.large_vals, i)
    st.large_meta[M_COUNT] -= 1
    pos = st.large_meta[M_HIST_POS]
    st.large_meta[M_HIST0 + pos] = addr
    st.large_meta[M_HIST_POS] = (pos + 1) % LARGE_HISTORY
    mutex_unlock(lock)
    sys_munmap(addr, length)
    st.stats[t, S_UNMAP] += 1
    st.stats[t, S_LARGE_FREES] += 1
    return V_OK


@inline
def large_usable(st, t, addr):
    """``(code, mapped_length)`` for *addr* as a large object; validates like ``large_free``."""
    p = st.params
    lock = p[P_LARGE_LOCK]
    mutex_lock(lock)
    i = table_find(st.large_keys, addr)
    if i >= 0:
        length = st.large_vals[i, 0]
        mutex_unlock(lock)
        return V_OK, length
    known = _interior(st.large_keys, st.large_vals, addr) or _recently_freed(st.large_meta, addr)
    mutex_unlock(lock)
    code = V_UNKNOWN_LARGE if known else V_OUTSIDE
    st.stats[t, S_VIOL0 + code] += 1
    return code, 0
