"""Heap geometry: size classes, heap/subheap/bag placement and shadow words.

The small-object region is an array of heaps; each heap holds one subheap
per thread and each subheap one bag per size class, so for a byte offset
``off`` from the heap base::

    bag ordinal = off >> bag_shift = (heap * max_threads + thread) * num_classes + class

Every bag owns ``bag_size / 16`` consecutive shadow words regardless of its
class, which keeps object <-> metadata translation to a shift and an add.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import inline

NUM_CLASSES = 17
MIN_CLASS_SHIFT = 4
WORD = 8
LARGE = -1

# slots of the int64 parameter vector shared by every kernel
P_HEAP_BASE = 0
P_HEAP_SIZE = 1
P_SHADOW_BASE = 2
P_SHADOW_SIZE = 3
P_BAG_SHIFT = 4
P_NUM_CLASSES = 5
P_MAX_THREADS = 6
P_NUM_HEAPS = 7
P_OVERRIDE_W = 8
P_GUARD_THRESHOLD = 9
P_CANARY = 10
P_DESTROY = 11
P_PAGE_SHIFT = 12
P_LOCK_BASE = 13
P_FORCE_CHAIN = 14
P_LARGE_LOCK = 15
P_LARGE_CAP = 16
N_PARAMS = 20


class OutsideShadow(ValueError):
    pass


@inline
def class_for_request(request, num_classes):
    """Class index for *request* bytes plus one canary byte, or -1 if large."""
    need = max(request, 1) + 1
    if need > (1 << (MIN_CLASS_SHIFT + num_classes - 1)):
        return -1
    c = 0
    while (1 << (MIN_CLASS_SHIFT + c)) < need:
        c += 1
    return c


@inline
def decompose_offset(off, bag_shift, num_classes, max_threads, num_heaps):
    if off < 0:
        return -1, -1, -1, -1
    bag = off >> bag_shift
    c = bag % num_classes
    rest = bag // num_classes
    t = rest % max_threads
    h = rest // max_threads
    if h >= num_heaps:
        return -1, -1, -1, -1
    slot = (off & ((1 << bag_shift) - 1)) >> (MIN_CLASS_SHIFT + c)
    return h, t, c, slot


@inline
def compose_offset(h, t, c, slot, bag_shift, num_classes, max_threads):
    bag = (h * max_threads + t) * num_classes + c
    return (bag << bag_shift) + (slot << (MIN_CLASS_SHIFT + c))


@inline
def slot_shadow_index(bag, slot, bag_shift):
    return (bag << (bag_shift - MIN_CLASS_SHIFT)) + slot


@inline
def object_offset_for_index(idx, bag_shift, num_classes):
    """Heap offset of the slot owning shadow word *idx*, or -1 for padding words."""
    per_bag = bag_shift - MIN_CLASS_SHIFT
    bag = idx >> per_bag
    slot = idx & ((1 << per_bag) - 1)
    c = bag % num_classes
    if slot >= (1 << (bag_shift - MIN_CLASS_SHIFT - c)):
        return -1
    return (bag << bag_shift) + (slot << (MIN_CLASS_SHIFT + c))


def size_class_for(request, num_classes=NUM_CLASSES):
    """Smallest class holding *request* bytes plus a canary; ``LARGE`` if none."""
    if request < 0:
        raise ValueError("request must be non-negative")
    return int(class_for_request(request, num_classes))


def class_size(index):
    return 1 << (MIN_CLASS_SHIFT + index)


@dataclass(frozen=True)
class LayoutGeometry:
    heap_base: int
    shadow_base: int
    bag_size: int
    num_heaps: int
    max_threads: int = 128
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.bag_size & (self.bag_size - 1):
            raise ValueError("bag_size must be a power of two")
        if self.bag_size < (1 << (MIN_CLASS_SHIFT + self.num_classes - 1)):
            raise ValueError("bag_size must hold at least one object of the largest class")
        if self.shadow_base < self.heap_base + self.heap_size and self.heap_base < self.shadow_base + self.shadow_size:
            raise ValueError("shadow region overlaps the heap region")

    @classmethod
    def for_region(cls, heap_base, shadow_base, region_size, bag_size,
                   max_threads=128, num_classes=NUM_CLASSES):
        num_heaps = region_size // (max_threads * num_classes * bag_size)
        if num_heaps < 1:
            raise ValueError("reserved region too small for one heap")
        return cls(heap_base, shadow_base, bag_size, num_heaps, max_threads, num_classes)

    @property
    def bag_shift(self):
        return self.bag_size.bit_length() - 1

    @property
    def subheap_stride(self):
        return self.num_classes * self.bag_size

    @property
    def heap_stride(self):
        return self.max_threads * self.subheap_stride

    @property
    def heap_size(self):
        return self.num_heaps * self.heap_stride

    @property
    def shadow_stride_per_bag(self):
        return (self.bag_size // 16) * WORD

    @property
    def num_bags(self):
        return self.num_heaps * self.max_threads * self.num_classes

    @property
    def shadow_size(self):
        return self.num_bags * self.shadow_stride_per_bag

    def slots_per_bag(self, class_index):
        return self.bag_size >> (MIN_CLASS_SHIFT + class_index)

    def contains(self, address):
        return self.heap_base <= address < self.heap_base + self.heap_size

    def decompose(self, address):
        """``(heap, thread, class, slot)`` for *address*, or None outside the heap."""
        if not self.contains(address):
            return None
        h, t, c, s = decompose_offset(address - self.heap_base, self.bag_shift,
                                      self.num_classes, self.max_threads, self.num_heaps)
        return int(h), int(t), int(c), int(s)

    def compose(self, heap, thread, class_index, slot):
        return self.heap_base + int(compose_offset(heap, thread, class_index, slot, self.bag_shift,
                                                   self.num_classes, self.max_threads))

    def shadow_for(self, heap, thread, class_index, slot):
        bag = (heap * self.max_threads + thread) * self.num_classes + class_index
        return self.shadow_base + WORD * int(slot_shadow_index(bag, slot, self.bag_shift))

    def object_for(self, shadow_address):
        delta = shadow_address - self.shadow_base
        if delta < 0 or delta >= self.shadow_size or delta % WORD:
            raise OutsideShadow(f"{shadow_address:#x} is not a shadow word")
        off = int(object_offset_for_index(delta // WORD, self.bag_shift, self.num_classes))
        if off < 0:
            raise OutsideShadow(f"{shadow_address:#x} is a padding word with no slot")
        return self.heap_base + off

    def params(self):
        p = np.zeros(N_PARAMS, dtype=np.int64)
        p[P_HEAP_BASE] = self.heap_base
        p[P_HEAP_SIZE] = self.heap_size
        p[P_SHADOW_BASE] = self.shadow_base
        p[P_SHADOW_SIZE] = self.shadow_size
        p[P_BAG_SHIFT] = self.bag_shift
        p[P_NUM_CLASSES] = self.num_classes
        p[P_MAX_THREADS] = self.max_threads
        p[P_NUM_HEAPS] = self.num_heaps
        return p
