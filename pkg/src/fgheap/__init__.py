"""Secure BIBOP heap allocator with shadow metadata."""
from ._jit import BACKEND
from .allocator import (
    AllocStats, Allocator, SecurityReport, calloc, default_allocator, fg_calloc, fg_free,
    fg_malloc, fg_realloc, fg_reset_for_tests, fg_stats, free, malloc, read, realloc, write,
)
from .config import AllocatorConfig
from .layout import LARGE, LayoutGeometry, OutsideShadow, class_size, size_class_for

__all__ = [
    "AllocStats", "Allocator", "AllocatorConfig", "BACKEND", "LARGE", "LayoutGeometry",
    "OutsideShadow", "SecurityReport", "calloc", "class_size", "default_allocator",
    "fg_calloc", "fg_free", "fg_malloc", "fg_realloc", "fg_reset_for_tests", "fg_stats",
    "free", "malloc", "read", "realloc", "size_class_for", "write",
]
