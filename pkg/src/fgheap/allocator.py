"""Public allocation surface.

:class:`Allocator` owns one reserved heap.  The module-level ``fg_*``
functions (also exported under the standard ``malloc``/``free``/``calloc``/
``realloc`` names) drive a process-wide instance built lazily from the
``FG_*`` environment variables.  Addresses are plain ints and 0 is the
failure/null value.
"""
from __future__ import annotations

import collections
import os
import sys
import threading
import traceback
import weakref
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _native
from ._jit import inline
from ._state import (
    C_HEAP, LARGE_HISTORY, M_HIST0, N_CHAIN_FIELDS, N_CHAINS, S_ALLOCS, S_BUMP, S_CHAIN0,
    S_CLASS0, S_FREELIST, S_FREES, S_GRANULES, S_GUARDS, S_LARGE_ALLOCS, S_LARGE_FREES,
    S_MADVISE, S_MAP, S_OVERRIDE, S_PROTECT, S_UNMAP, S_VIOL0, V_OK, V_UNKNOWN_LARGE,
    VIOLATION_TAGS, HeapState,
)
from .config import AllocatorConfig
from .large import LARGE_CAPACITY, large_allocate, large_free, large_usable
from .layout import (
    MIN_CLASS_SHIFT, NUM_CLASSES, P_CANARY, P_DESTROY, P_FORCE_CHAIN, P_GUARD_THRESHOLD,
    P_HEAP_BASE, P_HEAP_SIZE, P_LARGE_CAP, P_LARGE_LOCK, P_LOCK_BASE, P_NUM_CLASSES,
    P_OVERRIDE_W, P_PAGE_SHIFT, LayoutGeometry, class_for_request,
)
from .rng import seed_states
from .small import ALLOC_FATAL, classify, small_allocate, small_free

GIB = 1 << 30
DEFAULT_REGION = 512 * GIB
SIZE_LIMIT = 1 << 62


@inline
def malloc_kernel(st, t, size):
    c = class_for_request(size, st.params[P_NUM_CLASSES])
    if c < 0:
        return large_allocate(st, t, size)
    return small_allocate(st, t, c)


@inline
def in_heap(st, addr):
    off = addr - st.params[P_HEAP_BASE]
    return off >= 0 and off < st.params[P_HEAP_SIZE]


@inline
def free_kernel(st, t, addr):
    if addr == 0:
        return V_OK, 0
    if in_heap(st, addr):
        return small_free(st, t, addr)
    return large_free(st, t, addr), addr


@inline
def usable_kernel(st, t, addr):
    """``(code, capacity)`` of a live block, validated like a free."""
    if in_heap(st, addr):
        code, h, owner, c, idx = classify(st, addr - st.params[P_HEAP_BASE])
        if code != V_OK:
            st.stats[t, S_VIOL0 + code] += 1
            return code, 0
        return V_OK, (1 << (MIN_CLASS_SHIFT + c)) - 1
    return large_usable(st, t, addr)


@dataclass
class SecurityReport:
    kind: str
    address: int
    class_index: int | str | None
    diagnosis: str
    stack: list = field(default_factory=list)

    def line(self):
        cls = "-" if self.class_index is None else self.class_index
        return f"FG-VIOLATION kind={self.kind} addr={self.address:#x} class={cls}"

    def emit(self, stream=None):
        stream = sys.stderr if stream is None else stream
        stream.write(self.line() + "\n")
        for frame in self.stack:
            stream.write(f"  {frame}\n")
        stream.flush()


_DIAGNOSES = {
    "InvalidFree/OutsideHeap": "pointer lies outside every region managed by the allocator",
    "InvalidFree/Unaligned": "pointer is not the start of a slot of its size class",
    "InvalidFree/NeverAllocated": "pointer falls in the heap but that slot was never handed out",
    "DoubleFree": "slot is already free",
    "OverflowDetected": "canary at the end of this slot was overwritten",
    "InvalidFree/UnknownLarge": "pointer is not the base of a live large object",
}


@dataclass
class AllocStats:
    allocations: int = 0
    frees: int = 0
    freelist_served: int = 0
    bump_served: int = 0
    overrides: int = 0
    granules: int = 0
    guard_granules: int = 0
    map_calls: int = 0
    unmap_calls: int = 0
    protect_calls: int = 0
    madvise_calls: int = 0
    large_allocations: int = 0
    large_frees: int = 0
    chain_choices: list = field(default_factory=lambda: [0] * N_CHAINS)
    violations: dict = field(default_factory=dict)
    allocations_by_class: list = field(default_factory=lambda: [0] * NUM_CLASSES)

    @classmethod
    def from_rows(cls, rows):
        tot = rows.sum(axis=0)
        return cls(
            allocations=int(tot[S_ALLOCS]), frees=int(tot[S_FREES]),
            freelist_served=int(tot[S_FREELIST]), bump_served=int(tot[S_BUMP]),
            overrides=int(tot[S_OVERRIDE]), granules=int(tot[S_GRANULES]),
            guard_granules=int(tot[S_GUARDS]), map_calls=int(tot[S_MAP]),
            unmap_calls=int(tot[S_UNMAP]), protect_calls=int(tot[S_PROTECT]),
            madvise_calls=int(tot[S_MADVISE]), large_allocations=int(tot[S_LARGE_ALLOCS]),
            large_frees=int(tot[S_LARGE_FREES]),
            chain_choices=[int(v) for v in tot[S_CHAIN0:S_CHAIN0 + N_CHAINS]],
            violations={tag: int(tot[S_VIOL0 + code]) for code, tag in VIOLATION_TAGS.items()},
            allocations_by_class=[int(v) for v in tot[S_CLASS0:]],
        )

    def as_dict(self):
        return asdict(self)


class _Binding:
    __slots__ = ("index", "_pool")

    def __init__(self, pool, index):
        self.index = index
        self._pool = pool

    def __del__(self):
        self._pool.release(self.index)


class _ThreadPool:
    """Hands out subheap indices round-robin and recycles them when threads exit."""

    def __init__(self, n):
        self._free = collections.deque(range(n))
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            if not self._free:
                raise RuntimeError("more live threads than max_threads subheaps")
            return self._free.popleft()

    def release(self, index):
        with self._lock:
            self._free.append(index)


def _unmap_all(regions):
    for base, length in regions:
        _native.release(base, length)


class Allocator:
    def __init__(self, config=None, region_size=DEFAULT_REGION):
        self.config = config = config or AllocatorConfig.from_env()
        threads = config.max_threads
        stride = threads * NUM_CLASSES * config.bag_size
        num_heaps = region_size // stride
        if num_heaps < 1:
            raise ValueError("region_size too small for one heap")
        heap_size = num_heaps * stride
        heap_base = _native.reserve(heap_size)
        shadow_base = _native.reserve(heap_size // 2)
        self._regions = [(heap_base, heap_size), (shadow_base, heap_size // 2)]
        self._finalizer = weakref.finalize(self, _unmap_all, list(self._regions))
        self.geometry = geo = LayoutGeometry(heap_base, shadow_base, config.bag_size,
                                             num_heaps, threads, NUM_CLASSES)

        p = geo.params()
        p[P_OVERRIDE_W] = config.override_weight_w or 0
        p[P_GUARD_THRESHOLD] = int(config.guard_budget * (1 << 53))
        p[P_CANARY] = config.canary_byte
        p[P_DESTROY] = int(config.destroy_on_free)
        p[P_PAGE_SHIFT] = _native.PAGE_SHIFT
        p[P_FORCE_CHAIN] = -1 if config.force_chain is None else config.force_chain
        n_locks = threads * NUM_CLASSES * N_CHAINS + 1
        self._locks = np.zeros(n_locks * _native.MUTEX_BYTES, dtype=np.uint8)
        p[P_LOCK_BASE] = self._locks.ctypes.data
        p[P_LARGE_LOCK] = p[P_LOCK_BASE] + (n_locks - 1) * _native.MUTEX_BYTES
        p[P_LARGE_CAP] = LARGE_CAPACITY

        chains = np.zeros((threads, NUM_CLASSES, N_CHAINS, N_CHAIN_FIELDS), dtype=np.int64)
        chains[..., C_HEAP] = -1
        stats = np.zeros((threads, S_CLASS0 + NUM_CLASSES), dtype=np.int64)
        stats[0, S_MAP] = 2  # the two reservations above
        self.state = HeapState(
            params=p,
            heap=_native.view(heap_base, heap_size),
            shadow=_native.view(shadow_base, heap_size // 2, _native.ctypes.c_uint64),
            guards=np.zeros(heap_size >> (_native.PAGE_SHIFT + 3), dtype=np.uint8),
            chains=chains,
            rng=seed_states(config.run_seed, threads),
            stats=stats,
            large_keys=np.zeros(LARGE_CAPACITY, dtype=np.int64),
            large_vals=np.zeros((LARGE_CAPACITY, 2), dtype=np.int64),
            large_meta=np.zeros(M_HIST0 + LARGE_HISTORY, dtype=np.int64),
        )
        self.reports = []
        self._pool = _ThreadPool(threads)
        self._local = threading.local()

    # thread binding -----------------------------------------------------

    def thread_index(self):
        binding = getattr(self._local, "binding", None)
        if binding is None:
            binding = self._local.binding = _Binding(self._pool, self._pool.acquire())
        return binding.index

    # allocation surface -------------------------------------------------

    def malloc(self, size):
        if size < 0 or size > SIZE_LIMIT:
            return 0
        addr = int(malloc_kernel(self.state, self.thread_index(), size))
        if addr == ALLOC_FATAL:
            raise RuntimeError("guard granule protection failed (check vm.max_map_count)")
        return addr

    def free(self, addr):
        """Release *addr*.  Returns None, or the report when aborting is disabled."""
        if not addr:
            return None
        code, where = free_kernel(self.state, self.thread_index(), addr)
        if code != V_OK:
            return self._violation(int(code), int(where))
        return None

    def calloc(self, count, size):
        if count < 0 or size < 0:
            return 0
        total = count * size
        if total > SIZE_LIMIT:
            return 0
        addr = self.malloc(total)
        if addr and self.geometry.contains(addr):
            c = class_for_request(total, NUM_CLASSES)
            _native.fill(addr, 0, (1 << (MIN_CLASS_SHIFT + c)) - 1)
        return addr

    def realloc(self, addr, size):
        if not addr:
            return self.malloc(size)
        if size < 0 or size > SIZE_LIMIT:
            return 0
        code, capacity = usable_kernel(self.state, self.thread_index(), addr)
        if code != V_OK:
            self._violation(int(code), addr)
            return 0
        if size <= capacity:
            return addr
        new = self.malloc(size)
        if new:
            _native.copy(new, addr, min(int(capacity), size))
            self.free(addr)
        return new

    def usable_capacity(self, addr):
        code, capacity = usable_kernel(self.state, self.thread_index(), addr)
        return int(capacity) if code == V_OK else 0

    def stats(self):
        return AllocStats.from_rows(self.state.stats)

    # violations ---------------------------------------------------------

    def _violation(self, code, addr):
        kind = VIOLATION_TAGS[code]
        where = self.geometry.decompose(addr)
        if where is not None:
            class_index = where[2]
        elif code == V_UNKNOWN_LARGE:
            class_index = "large"
        else:
            class_index = None
        stack = [line.strip().replace("\n", " ") for line in traceback.format_stack()[:-2]]
        report = SecurityReport(kind, addr, class_index, _DIAGNOSES[kind], stack[-8:])
        if self.config.abort_on_violation:
            report.emit()
            os.abort()
        self.reports.append(report)
        return report

    # lifetime -----------------------------------------------------------

    def close(self):
        if self.state is None:
            return
        keys = self.state.large_keys
        for i in np.nonzero(keys)[0]:
            _native.release(int(keys[i]), int(self.state.large_vals[i, 0]))
        self.state = None
        self._finalizer()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def warm_up():
    """Load every allocator kernel once, so forked children start compiled."""
    cfg = AllocatorConfig.draw(seed=1, max_threads=1, abort_on_violation=False)
    with Allocator(cfg, region_size=1 << 30) as alloc:
        small = alloc.calloc(2, 8)
        small = alloc.realloc(small, 4000)
        big = alloc.malloc(2 << 20)
        alloc.free(small)
        alloc.free(big)
        alloc.free(big)
        alloc.reports.clear()


read = _native.read_bytes
write = _native.write_bytes

_default = None
_once = threading.Lock()


def default_allocator():
    global _default
    alloc = _default
    if alloc is None:
        with _once:
            if _default is None:
                _default = Allocator()
            alloc = _default
    return alloc


def fg_malloc(size):
    return default_allocator().malloc(size)


def fg_free(addr):
    return default_allocator().free(addr)


def fg_calloc(count, size):
    return default_allocator().calloc(count, size)


def fg_realloc(addr, size):
    return default_allocator().realloc(addr, size)


def fg_stats():
    # Before the first allocation nothing has been reserved yet.
    if _default is None:
        return AllocStats()
    return _default.stats()


def fg_reset_for_tests(config=None):
    """Drop the process-wide allocator; the next call rebuilds it (optionally from *config*)."""
    global _default
    with _once:
        if _default is not None:
            _default.close()
        _default = Allocator(config) if config is not None else None


malloc = fg_malloc
free = fg_free
calloc = fg_calloc
realloc = fg_realloc
