import numpy as np
import pytest
from hypothesis import settings

from fgheap import Allocator, AllocatorConfig
from fgheap._state import C_HEAD, C_TAIL
from fgheap.layout import WORD

GIB = 1 << 30

# first calls may load compiled kernels from the cache
settings.register_profile("fgheap", deadline=None)
settings.load_profile("fgheap")


def make_allocator(seed=11, region_size=2 * GIB, **kw):
    kw.setdefault("max_threads", 4)
    kw.setdefault("abort_on_violation", False)
    kw.setdefault("bag_size", 4 << 20)
    return Allocator(AllocatorConfig.draw(seed=seed, **kw), region_size=region_size)


@pytest.fixture
def alloc_factory():
    made = []

    def factory(**kw):
        a = make_allocator(**kw)
        made.append(a)
        return a

    yield factory
    for a in made:
        a.close()


@pytest.fixture
def alloc(alloc_factory):
    return alloc_factory()


def walk_freelist(alloc, t, c, j):
    """Shadow addresses on freelist *j* of (thread, class), head first."""
    st = alloc.state
    base = alloc.geometry.shadow_base
    link = int(st.chains[t, c, j, C_HEAD])
    seen = []
    limit = int(st.stats[:, 1].sum()) + 1  # total frees bounds any list
    while link:
        seen.append(link)
        assert len(seen) <= limit, "freelist does not terminate"
        link = int(st.shadow[(link - base) // WORD])
    tail = int(st.chains[t, c, j, C_TAIL])
    assert (tail == 0) == (not seen)
    if seen:
        assert seen[-1] == tail
    return seen


def shadow_word(alloc, addr):
    geo = alloc.geometry
    h, t, c, s = geo.decompose(addr)
    return int(alloc.state.shadow[(geo.shadow_for(h, t, c, s) - geo.shadow_base) // WORD])


def page_is_guard(alloc, addr):
    from fgheap._native import PAGE_SHIFT

    page = (addr - alloc.geometry.heap_base) >> PAGE_SHIFT
    return bool((alloc.state.guards[page >> 3] >> (page & 7)) & 1)


def guard_pages(alloc):
    return int(np.unpackbits(alloc.state.guards).sum())
