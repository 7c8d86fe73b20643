"""Small-object kernels: chain selection, bump allocation with random guard
granules, FIFO freelists threaded through shadow words, canaries and
free-time classification.

Each bag is split into four equal quadrants; quadrant ``j`` is the bump
region of chain ``j``.  When a quadrant runs out the chain moves on to the
same quadrant of the same bag in the next heap.  Freelists are not
positional: a freed slot may be appended to any of its owner's four lists.
"""
import numpy as np

from ._jit import inline
from ._native import MUTEX_BYTES, PROT_NONE, mutex_lock, mutex_unlock, sys_mprotect
from ._state import (
    C_CUR, C_HEAD, C_HEAP, C_TAIL, N_CHAINS, S_ALLOCS, S_BUMP, S_CHAIN0, S_CLASS0,
    S_FREELIST, S_FREES, S_GRANULES, S_GUARDS, S_OVERRIDE, S_PROTECT, S_VIOL0,
    V_DOUBLE, V_NEVER, V_OK, V_OUTSIDE, V_OVERFLOW, V_UNALIGNED,
)
from .layout import (
    MIN_CLASS_SHIFT, P_BAG_SHIFT, P_CANARY, P_DESTROY, P_FORCE_CHAIN, P_GUARD_THRESHOLD,
    P_HEAP_BASE, P_LOCK_BASE, P_MAX_THREADS, P_NUM_CLASSES, P_NUM_HEAPS, P_OVERRIDE_W,
    P_PAGE_SHIFT, P_SHADOW_BASE, decompose_offset, object_offset_for_index,
)
from .rng import rng_next

DESTROY_BYTE = 0xDF
IN_USE = 1

ALLOC_FAILED = 0
ALLOC_FATAL = -1


@inline
def choose_chain(r, w):
    """Chain ``r % 4`` and whether ``r % w == 0`` overrides the freelist (``w=0``: never)."""
    n = np.int64(r & np.uint64(3))
    override = w > 0 and r % np.uint64(w) == np.uint64(0)
    return n, override


@inline
def lock_address(p, t, c, j):
    return p[P_LOCK_BASE] + ((t * p[P_NUM_CLASSES] + c) * N_CHAINS + j) * MUTEX_BYTES


@inline
def quadrant_start(p, h, t, c, j):
    shift = p[P_BAG_SHIFT]
    bag = (h * p[P_MAX_THREADS] + t) * p[P_NUM_CLASSES] + c
    return (bag << shift) + j * ((1 << shift) >> 2)


@inline
def granule_size(p, c):
    return 1 << max(p[P_PAGE_SHIFT], MIN_CLASS_SHIFT + c)


@inline
def is_guard(st, off):
    page = off >> st.params[P_PAGE_SHIFT]
    return ((st.guards[page >> 3] >> (page & 7)) & 1) == 1


@inline
def _mark_guard(st, off, length):
    shift = st.params[P_PAGE_SHIFT]
    for page in range(off >> shift, (off + length) >> shift):
        st.guards[page >> 3] |= np.uint8(1 << (page & 7))


@inline
def slot_index(p, off, c):
    shift = p[P_BAG_SHIFT]
    bag = off >> shift
    return (bag << (shift - MIN_CLASS_SHIFT)) + ((off & ((1 << shift) - 1)) >> (MIN_CLASS_SHIFT + c))


@inline
def frontier(st, t, c, j, h):
    """First never-allocated offset of quadrant *j* in heap *h*."""
    p = st.params
    chain_heap = st.chains[t, c, j, C_HEAP]
    start = quadrant_start(p, h, t, c, j)
    if chain_heap < 0 or h > chain_heap:
        return start
    if h < chain_heap:
        return start + ((1 << p[P_BAG_SHIFT]) >> 2)
    return st.chains[t, c, j, C_CUR]


@inline
def advance_bump(st, t, c, j):
    """Settle a cursor that just reached a granule boundary.

    Draws once per granule; a drawn granule is protected, recorded and
    skipped.  A cursor at the end of its quadrant moves to the next heap.
    Returns -1 if the protection call failed.
    """
    p = st.params
    ch = st.chains
    gsize = granule_size(p, c)
    qsize = (1 << p[P_BAG_SHIFT]) >> 2
    thresh = np.uint64(p[P_GUARD_THRESHOLD])
    while True:
        h = ch[t, c, j, C_HEAP]
        cur = ch[t, c, j, C_CUR]
        if cur >= quadrant_start(p, h, t, c, j) + qsize:
            h += 1
            ch[t, c, j, C_HEAP] = h
            if h >= p[P_NUM_HEAPS]:
                return 0
            cur = quadrant_start(p, h, t, c, j)
            ch[t, c, j, C_CUR] = cur
        st.stats[t, S_GRANULES] += 1
        if thresh == np.uint64(0) or (rng_next(st.rng, t) >> np.uint64(11)) >= thresh:
            return 0
        if sys_mprotect(p[P_HEAP_BASE] + cur, gsize, PROT_NONE) != 0:
            return -1
        _mark_guard(st, cur, gsize)
        st.stats[t, S_GUARDS] += 1
        st.stats[t, S_PROTECT] += 1
        ch[t, c, j, C_CUR] = cur + gsize


@inline
def bump_take(st, t, c, j):
    """Offset of the next never-allocated slot of chain *j*; -1 exhausted, -2 fatal."""
    p = st.params
    ch = st.chains
    if ch[t, c, j, C_HEAP] < 0:
        ch[t, c, j, C_HEAP] = 0
        ch[t, c, j, C_CUR] = quadrant_start(p, 0, t, c, j)
        if advance_bump(st, t, c, j) < 0:
            return -2
    if ch[t, c, j, C_HEAP] >= p[P_NUM_HEAPS]:
        return -1
    off = ch[t, c, j, C_CUR]
    cur = off + (1 << (MIN_CLASS_SHIFT + c))
    ch[t, c, j, C_CUR] = cur
    if (cur & (granule_size(p, c) - 1)) == 0:
        if advance_bump(st, t, c, j) < 0:
            return -2
    return off


@inline
def pop_free(st, t, c, j):
    """Unlink the head of a freelist and mark it in use; -1 if the list is empty."""
    p = st.params
    lock = lock_address(p, t, c, j)
    mutex_lock(lock)
    head = st.chains[t, c, j, C_HEAD]
    if head == 0:
        mutex_unlock(lock)
        return -1
    idx = (head - p[P_SHADOW_BASE]) >> 3
    nxt = np.int64(st.shadow[idx])
    st.chains[t, c, j, C_HEAD] = nxt
    if nxt == 0:
        st.chains[t, c, j, C_TAIL] = 0
    st.shadow[idx] = IN_USE
    mutex_unlock(lock)
    return object_offset_for_index(idx, p[P_BAG_SHIFT], p[P_NUM_CLASSES])


@inline
def push_free(st, t, c, j, idx):
    """Append shadow word *idx* (already cleared to 0) at the tail of a freelist."""
    p = st.params
    link = p[P_SHADOW_BASE] + (idx << 3)
    lock = lock_address(p, t, c, j)
    mutex_lock(lock)
    tail = st.chains[t, c, j, C_TAIL]
    if tail == 0:
        st.chains[t, c, j, C_HEAD] = link
    else:
        st.shadow[(tail - p[P_SHADOW_BASE]) >> 3] = link
    st.chains[t, c, j, C_TAIL] = link
    mutex_unlock(lock)


@inline
def small_allocate(st, t, c):
    """Allocate one slot of class *c* for thread *t*.

    Returns the address, ``ALLOC_FAILED`` when every heap is exhausted or
    ``ALLOC_FATAL`` when a guard granule could not be protected.
    """
    p = st.params
    j, override = choose_chain(rng_next(st.rng, t), p[P_OVERRIDE_W])
    if p[P_FORCE_CHAIN] >= 0:
        j = p[P_FORCE_CHAIN]
    cs = 1 << (MIN_CLASS_SHIFT + c)
    off = -1
    if not override:
        off = pop_free(st, t, c, j)
    if off >= 0:
        st.stats[t, S_FREELIST] += 1
    else:
        off = bump_take(st, t, c, j)
        if off == -2:
            return ALLOC_FATAL
        if off == -1:
            if override:
                off = pop_free(st, t, c, j)
            if off < 0:
                return ALLOC_FAILED
            st.stats[t, S_FREELIST] += 1
        else:
            st.shadow[slot_index(p, off, c)] = IN_USE
            st.stats[t, S_BUMP] += 1
            if override:
                st.stats[t, S_OVERRIDE] += 1
    st.heap[off + cs - 1] = p[P_CANARY]
    st.stats[t, S_ALLOCS] += 1
    st.stats[t, S_CHAIN0 + j] += 1
    st.stats[t, S_CLASS0 + c] += 1
    return p[P_HEAP_BASE] + off


@inline
def classify(st, off):
    """Status of heap offset *off* as a free target.

    Returns ``(code, heap, thread, class, shadow_index)``; code ``V_OK``
    means a live, slot-aligned object.
    """
    p = st.params
    shift = p[P_BAG_SHIFT]
    h, t, c, slot = decompose_offset(off, shift, p[P_NUM_CLASSES], p[P_MAX_THREADS], p[P_NUM_HEAPS])
    if h < 0:
        return V_OUTSIDE, h, t, c, -1
    if (off & ((1 << (MIN_CLASS_SHIFT + c)) - 1)) != 0:
        return V_UNALIGNED, h, t, c, -1
    if is_guard(st, off):
        return V_NEVER, h, t, c, -1
    idx = slot_index(p, off, c)
    word = np.int64(st.shadow[idx])
    if word == IN_USE:
        return V_OK, h, t, c, idx
    if (word & 1) == 0:
        j = (off & ((1 << shift) - 1)) >> (shift - 2)
        if off < frontier(st, t, c, j, h):
            return V_DOUBLE, h, t, c, idx
    return V_NEVER, h, t, c, idx


@inline
def verify_canaries(st, off, h, t, c):
    """Check the canary of the slot at *off* and of two slots either side.

    Guard granules, never-allocated slots and slots outside the bag are
    skipped.  Returns the offset of the first corrupted slot or -1.
    """
    p = st.params
    canary = np.uint8(p[P_CANARY])
    cs = 1 << (MIN_CLASS_SHIFT + c)
    if st.heap[off + cs - 1] != canary:
        return off
    shift = p[P_BAG_SHIFT]
    bag_start = off & ~((1 << shift) - 1)
    bag_end = bag_start + (1 << shift)
    for k in range(-2, 3):
        n = off + k * cs
        if k == 0 or n < bag_start or n >= bag_end:
            continue
        if is_guard(st, n):
            continue
        if n >= frontier(st, t, c, (n - bag_start) >> (shift - 2), h):
            continue
        if st.heap[n + cs - 1] != canary:
            return n
    return -1


@inline
def small_free(st, caller, addr):
    """Free *addr* on behalf of thread *caller*; returns ``(code, address)``.

    On a violation nothing is modified and the address names the offending
    slot (the corrupted neighbour for ``V_OVERFLOW``).
    """
    p = st.params
    off = addr - p[P_HEAP_BASE]
    code, h, t, c, idx = classify(st, off)
    if code != V_OK:
        st.stats[caller, S_VIOL0 + code] += 1
        return code, addr
    bad = verify_canaries(st, off, h, t, c)
    if bad >= 0:
        st.stats[caller, S_VIOL0 + V_OVERFLOW] += 1
        return V_OVERFLOW, p[P_HEAP_BASE] + bad
    if p[P_DESTROY] != 0:
        st.heap[off:off + (1 << (MIN_CLASS_SHIFT + c)) - 1] = DESTROY_BYTE
    st.shadow[idx] = 0
    j = p[P_FORCE_CHAIN]
    if j < 0:
        j = np.int64(rng_next(st.rng, caller) & np.uint64(3))
    push_free(st, t, c, j, idx)
    st.stats[caller, S_FREES] += 1
    return V_OK, addr
