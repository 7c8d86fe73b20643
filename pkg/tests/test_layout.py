import pytest
from hypothesis import given, settings, strategies as st

from fgheap import LARGE, AllocatorConfig, LayoutGeometry, OutsideShadow, class_size, size_class_for
from fgheap.config import BAG_SIZES, MIB

HEAP = 0x7000_0000_0000
SHADOW = 0x6000_0000_0000


def full_geometry(bag_size=4 * MIB, num_heaps=2, max_threads=4):
    return LayoutGeometry(HEAP, SHADOW, bag_size, num_heaps, max_threads)


def reduced_geometry():
    # 4 KiB bags holding classes 16, 32 and 64 B: small enough to enumerate.
    return LayoutGeometry(HEAP, SHADOW, 4096, num_heaps=2, max_threads=3, num_classes=3)


def naive_slots(geo):
    """Every (h, t, c, s) with its address, built by plain nested iteration."""
    table = {}
    addr = geo.heap_base
    for h in range(geo.num_heaps):
        for t in range(geo.max_threads):
            for c in range(geo.num_classes):
                for s in range(geo.bag_size // class_size(c)):
                    table[(h, t, c, s)] = addr + s * class_size(c)
                addr += geo.bag_size
    return table


@pytest.mark.parametrize("request_size, expected", [
    (512, 1024), (15, 16), (33 * 1024, 64 * 1024), (0, 16), (16, 32), (1023, 1024),
    ((1 << 20) - 1, 1 << 20),
])
def test_size_class_examples(request_size, expected):
    assert class_size(size_class_for(request_size)) == expected


def test_one_mebibyte_is_large():
    assert size_class_for(1 << 20) == LARGE


@given(st.integers(0, 1 << 21), st.integers(0, 1 << 21))
def test_size_class_monotone(a, b):
    a, b = sorted((a, b))
    ca, cb = size_class_for(a), size_class_for(b)
    ka = 99 if ca == LARGE else ca
    kb = 99 if cb == LARGE else cb
    assert ka <= kb


@given(st.integers(0, (1 << 20) - 2))
def test_size_class_is_smallest_fit(n):
    c = size_class_for(n)
    assert class_size(c) >= max(n, 1) + 1
    assert c == 0 or class_size(c - 1) < max(n, 1) + 1


def test_class_sizes():
    assert [class_size(i) for i in range(17)] == [1 << (4 + i) for i in range(17)]


def test_geometry_strides():
    geo = full_geometry()
    assert geo.subheap_stride == 17 * geo.bag_size
    assert geo.shadow_stride_per_bag == geo.bag_size // 16 * 8
    assert geo.heap_size == 2 * 4 * 17 * geo.bag_size


def test_num_heaps_from_region():
    geo = LayoutGeometry.for_region(HEAP, SHADOW, 512 << 30, 32 * MIB, max_threads=128)
    assert geo.num_heaps == (512 << 30) // (128 * 17 * 32 * MIB)


def test_decompose_examples():
    geo = full_geometry()
    assert geo.decompose(HEAP) == (0, 0, 0, 0)
    assert geo.decompose(HEAP + geo.subheap_stride) == (0, 1, 0, 0)
    assert geo.decompose(HEAP + geo.heap_stride) == (1, 0, 0, 0)
    assert geo.decompose(HEAP - 1) is None
    assert geo.decompose(HEAP + geo.heap_size) is None
    # unaligned offsets still name the containing slot
    assert geo.decompose(HEAP + geo.bag_size + 40) == (0, 0, 1, 1)


def test_shadow_examples():
    geo = full_geometry()
    assert geo.shadow_for(0, 0, 0, 0) == SHADOW
    assert geo.shadow_for(0, 0, 1, 0) == SHADOW + geo.shadow_stride_per_bag
    assert geo.object_for(SHADOW) == HEAP
    with pytest.raises(OutsideShadow):
        geo.object_for(SHADOW + geo.shadow_size)
    with pytest.raises(OutsideShadow):
        geo.object_for(SHADOW - 8)
    with pytest.raises(OutsideShadow):
        geo.object_for(SHADOW + 4)


def test_full_bag_of_64k_slots_roundtrips():
    geo = full_geometry()
    c = size_class_for(33 * 1024)
    for h in range(geo.num_heaps):
        for t in range(geo.max_threads):
            bag = HEAP + ((h * geo.max_threads + t) * 17 + c) * geo.bag_size
            for s in range(geo.bag_size // class_size(c)):
                addr = bag + s * class_size(c)
                assert geo.compose(h, t, c, s) == addr
                assert geo.decompose(addr) == (h, t, c, s)
                assert geo.object_for(geo.shadow_for(h, t, c, s)) == addr


def test_reduced_geometry_bijection_exhaustive():
    geo = reduced_geometry()
    table = naive_slots(geo)
    shadows = set()
    for key, addr in table.items():
        assert geo.compose(*key) == addr
        assert geo.decompose(addr) == key
        sh = geo.shadow_for(*key)
        assert SHADOW <= sh < SHADOW + geo.shadow_size and sh % 8 == 0
        shadows.add(sh)
        assert geo.decompose(geo.object_for(sh)) == key
    assert len(shadows) == len(table)


def test_reduced_geometry_disjoint():
    geo = reduced_geometry()
    spans = sorted((addr, addr + class_size(key[2])) for key, addr in naive_slots(geo).items())
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        assert a1 <= b0
    assert spans[0][0] == HEAP and spans[-1][1] == HEAP + geo.heap_size


def test_padding_shadow_words_have_no_object():
    geo = reduced_geometry()
    # class 2 (64 B) uses 64 of the bag's 256 shadow words
    sh = geo.shadow_for(0, 0, 2, 0) + 64 * 8
    with pytest.raises(OutsideShadow):
        geo.object_for(sh)


@settings(max_examples=300)
@given(st.data())
def test_random_slots_roundtrip(data):
    geo = full_geometry(bag_size=data.draw(st.sampled_from(BAG_SIZES)))
    h = data.draw(st.integers(0, geo.num_heaps - 1))
    t = data.draw(st.integers(0, geo.max_threads - 1))
    c = data.draw(st.integers(0, 16))
    s = data.draw(st.integers(0, geo.slots_per_bag(c) - 1))
    addr = geo.compose(h, t, c, s)
    assert geo.decompose(addr) == (h, t, c, s)
    assert (addr - HEAP) % geo.bag_size % class_size(c) == 0
    assert geo.object_for(geo.shadow_for(h, t, c, s)) == addr


def test_overlapping_regions_rejected():
    with pytest.raises(ValueError):
        LayoutGeometry(HEAP, HEAP + 4096, 4 * MIB, 1, 1)


def test_config_invariants():
    with pytest.raises(ValueError):
        AllocatorConfig(bag_size=3 * MIB, canary_byte=1)
    with pytest.raises(ValueError):
        AllocatorConfig(bag_size=4 * MIB, canary_byte=1, guard_budget=0.6)
    with pytest.raises(ValueError):
        AllocatorConfig(bag_size=4 * MIB, canary_byte=1, override_weight_w=0)


def test_config_seed_determinism():
    a, b = AllocatorConfig.draw(seed=42), AllocatorConfig.draw(seed=42)
    assert (a.bag_size, a.canary_byte) == (b.bag_size, b.canary_byte)
    assert a.bag_size in BAG_SIZES and 1 <= a.canary_byte <= 255


def test_config_unseeded_varies():
    sizes = {AllocatorConfig.draw().bag_size for _ in range(8)}
    assert len(sizes) > 1


def test_config_from_env():
    cfg = AllocatorConfig.from_env({"FG_GUARD_BUDGET": "20", "FG_OVERRIDE_W": "8",
                                    "FG_DESTROY_ON_FREE": "1", "FG_ABORT": "0",
                                    "FG_SEED": "99", "FG_BAG_SIZE_MB": "16"})
    assert cfg.guard_budget == pytest.approx(0.2)
    assert cfg.override_weight_w == 8
    assert cfg.destroy_on_free and not cfg.abort_on_violation
    assert cfg.seed == 99 and cfg.bag_size == 16 * MIB
    defaults = AllocatorConfig.from_env({})
    assert defaults.guard_budget == 0.10 and defaults.override_weight_w == 16
    assert defaults.abort_on_violation and not defaults.destroy_on_free
    assert defaults.max_threads == 128 and defaults.large_threshold == MIB
