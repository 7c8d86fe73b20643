import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import guard_pages, make_allocator, page_is_guard, shadow_word, walk_freelist
from fgheap import class_size, size_class_for
from fgheap._native import PAGE_SIZE
from fgheap.rng import stream
from fgheap.small import choose_chain


@pytest.mark.parametrize("r, w, expected", [
    (7, 16, (3, False)), (32, 16, (0, True)), (48, 16, (0, True)), (5, 1, (1, True)),
    (32, 0, (0, False)),
])
def test_choose_chain(r, w, expected):
    n, override = choose_chain(np.uint64(r), w)
    assert (int(n), bool(override)) == expected


def test_fresh_chain_bumps(alloc_factory):
    a = alloc_factory(guard_budget=0.0, force_chain=2, override_weight_w=None)
    x = a.malloc(40)
    y = a.malloc(40)
    assert y - x == 64
    h, t, c, s = a.geometry.decompose(x)
    assert (h, c) == (0, size_class_for(40))
    # chain 2 bumps through the third quadrant of its bag
    assert s == 2 * a.geometry.slots_per_bag(c) // 4
    assert a.stats().bump_served == 2


def _seed_where(same_chain):
    # draws: allocation chain, free chain, next allocation chain
    for seed in range(1, 1000):
        r = [int(v) & 3 for v in stream(seed, 0, 3)]
        if (r[1] == r[2]) == same_chain:
            return seed
    raise AssertionError("no seed found")


@pytest.mark.parametrize("same_chain", [True, False])
def test_free_then_allocate_on_chosen_chain(same_chain):
    a = make_allocator(seed=_seed_where(same_chain), guard_budget=0.0, override_weight_w=None)
    try:
        x = a.malloc(100)
        assert a.free(x) is None
        assert (a.malloc(100) == x) == same_chain
    finally:
        a.close()


def test_fifo_order(alloc_factory):
    a = alloc_factory(guard_budget=0.0, force_chain=1, override_weight_w=None)
    xs = [a.malloc(24) for _ in range(50)]
    order = list(np.random.default_rng(3).permutation(xs))
    for x in order:
        a.free(int(x))
    assert [a.malloc(24) for _ in range(50)] == [int(x) for x in order]


def test_shadow_words(alloc):
    x = alloc.malloc(200)
    assert shadow_word(alloc, x) == 1
    alloc.free(x)
    assert shadow_word(alloc, x) & 1 == 0


def test_guard_budget_zero_never_protects(alloc_factory):
    a = alloc_factory(guard_budget=0.0)
    for _ in range(3000):
        a.malloc(3000)
    s = a.stats()
    assert s.protect_calls == 0 and s.guard_granules == 0
    assert guard_pages(a) == 0


def test_no_allocation_in_guard(alloc_factory):
    a = alloc_factory(guard_budget=0.3)
    objs = [(a.malloc(32), 64) for _ in range(10_000)]
    objs += [(a.malloc(5000), 8192) for _ in range(500)]
    assert a.stats().guard_granules > 0
    for x, size in objs:
        for page in range(x, x + size, PAGE_SIZE):
            assert not page_is_guard(a, page)


def test_guard_map_matches_protection(alloc_factory):
    a = alloc_factory(guard_budget=0.2)
    for _ in range(400):
        a.malloc(4000)
    s = a.stats()
    assert s.protect_calls == s.guard_granules
    assert guard_pages(a) == s.guard_granules


def test_large_class_guard_granule(alloc_factory):
    a = alloc_factory(guard_budget=0.5, bag_size=32 << 20, region_size=8 << 30)
    n = 200
    xs = [a.malloc(33 * 1024) for _ in range(n)]
    s = a.stats()
    assert s.guard_granules > 20
    # one draw per 64 KiB slot; each guard covers 16 pages
    assert guard_pages(a) == 16 * s.guard_granules
    assert n + s.guard_granules <= s.granules <= n + s.guard_granules + 4
    for x in xs:
        assert not page_is_guard(a, x)


def test_detection_kinds(alloc):
    x = alloc.malloc(100)
    y = alloc.malloc(100)
    assert alloc.free(x + 8).kind == "InvalidFree/Unaligned"
    assert alloc.free(x) is None
    assert alloc.free(x).kind == "DoubleFree"
    far = alloc.geometry.compose(0, 3, 0, 5)
    assert alloc.free(far).kind == "InvalidFree/NeverAllocated"
    assert alloc.free(alloc.geometry.heap_base - 4096).kind == "InvalidFree/OutsideHeap"
    assert alloc.free(y) is None
    kinds = alloc.stats().violations
    assert kinds["DoubleFree"] == 1 and kinds["InvalidFree/Unaligned"] == 1


def test_guard_slot_free_is_never_allocated(alloc_factory):
    a = alloc_factory(guard_budget=0.5)
    for _ in range(64):
        a.malloc(4000)
    geo = a.geometry
    guards = np.flatnonzero(np.unpackbits(a.state.guards, bitorder="little"))
    assert guards.size
    rep = a.free(geo.heap_base + int(guards[0]) * PAGE_SIZE)
    assert rep.kind == "InvalidFree/NeverAllocated"


def test_own_canary_overflow(alloc):
    from fgheap import write

    x = alloc.malloc(100)
    write(x, bytes([alloc.config.canary_byte ^ 0xFF]) * 128)
    rep = alloc.free(x)
    assert rep.kind == "OverflowDetected" and rep.address == x


def test_neighbour_canary_overflow(alloc_factory):
    from fgheap import write

    a = alloc_factory(guard_budget=0.0, force_chain=0)
    p, q, r = (a.malloc(60) for _ in range(3))
    assert (q - p, r - q) == (64, 64)
    write(p, bytes([a.config.canary_byte ^ 0xFF]) * 64)  # reaches p's own canary only
    rep = a.free(r)
    assert rep.kind == "OverflowDetected" and rep.address == p


def test_untouched_canaries_ok(alloc):
    xs = [alloc.malloc(n) for n in range(1, 300, 7)]
    for x in xs:
        assert alloc.free(x) is None


def test_destroy_on_free(alloc_factory):
    from fgheap import read, write

    a = alloc_factory(destroy_on_free=True, guard_budget=0.0)
    x = a.malloc(50)
    write(x, b"secret" * 8)
    a.free(x)
    assert read(x, 63) == b"\xdf" * 63
    assert read(x + 63, 1) == bytes([a.config.canary_byte])


def test_cross_thread_free_returns_to_owner(alloc_factory):
    import threading

    a = alloc_factory(guard_budget=0.0, override_weight_w=None, force_chain=0)
    x = a.malloc(30)
    owner = a.thread_index()
    out = {}

    def other():
        out["t"] = a.thread_index()
        out["rep"] = a.free(x)

    th = threading.Thread(target=other)
    th.start()
    th.join()
    assert out["t"] != owner and out["rep"] is None
    c = size_class_for(30)
    assert walk_freelist(a, owner, c, 0) == [a.geometry.shadow_for(*a.geometry.decompose(x))]
    assert a.malloc(30) == x


def test_exhaustion_moves_to_next_heap(alloc_factory):
    a = alloc_factory(guard_budget=0.0, force_chain=3, bag_size=4 << 20, region_size=1 << 30)
    geo = a.geometry
    assert geo.num_heaps >= 2
    per_quadrant = geo.slots_per_bag(16) // 4
    xs = [a.malloc(600 * 1024) for _ in range(per_quadrant + 1)]
    assert [geo.decompose(x)[0] for x in xs] == [0] * per_quadrant + [1]


def test_out_of_memory_returns_null(alloc_factory):
    a = alloc_factory(guard_budget=0.0, force_chain=0, override_weight_w=None,
                      region_size=1 << 30)
    geo = a.geometry
    total = geo.num_heaps * geo.slots_per_bag(16) // 4
    xs = [a.malloc(600 * 1024) for _ in range(total)]
    assert all(xs) and len(set(xs)) == total
    assert a.malloc(600 * 1024) == 0
    a.free(xs[0])
    assert a.malloc(600 * 1024) == xs[0]


class ShadowModel:
    def __init__(self, a):
        self.a = a
        self.live = set()
        self.dead = set()

    def check(self):
        a = self.a
        for x in self.live:
            assert shadow_word(a, x) == 1
        for x in self.dead:
            assert shadow_word(a, x) & 1 == 0
        # count in-use words over every bag the test could have touched
        geo = a.geometry
        words = geo.shadow_stride_per_bag // 8
        total = 0
        for c in range(17):
            start = c * words
            total += int(np.count_nonzero(a.state.shadow[start:start + words] == 1))
        assert total == len(self.live)
        for c in range(17):
            for j in range(4):
                walk_freelist(a, 0, c, j)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.one_of(st.integers(1, 3000), st.integers(-200, -1)), max_size=80),
       st.integers(1, 2**32))
def test_shadow_model(ops, seed):
    a = make_allocator(seed=seed, max_threads=1, region_size=1 << 30, guard_budget=0.0)
    try:
        model = ShadowModel(a)
        order = []
        for op in ops:
            if op > 0:
                x = a.malloc(op)
                assert x not in model.live
                model.live.add(x)
                model.dead.discard(x)
                order.append(x)
            elif model.live:
                x = order[op % len(order)]
                if x in model.live:
                    assert a.free(x) is None
                    model.live.discard(x)
                    model.dead.add(x)
                else:
                    assert a.free(x).kind == "DoubleFree"
            model.check()
    finally:
        a.close()


def test_chain_choice_uniform(alloc):
    from scipy.stats import chisquare

    for _ in range(20_000):
        alloc.free(alloc.malloc(48))
    counts = alloc.stats().chain_choices
    assert sum(counts) == 20_000
    assert chisquare(counts).pvalue > 0.001
