"""Synthetic allocation workloads and the benchmark driver.

The inner loop of every workload is a kernel, so the allocator under test
and the system allocator are both driven from compiled code and the
comparison is not swamped by interpreter overhead.
"""
from __future__ import annotations

import json
import resource
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import _native
from .._jit import inline, jit
from .._native import c_free, c_malloc, c_memset
from ..allocator import Allocator, AllocStats, free_kernel, malloc_kernel
from ..config import AllocatorConfig
from ..rng import rng_next, seed_states
from ._fork import run_forked

SIZE_KINDS = ("fixed", "uniform", "mixed")
LIFETIMES = ("immediate", "fifo", "random")
TOUCH_BYTES = 64


@dataclass
class WorkloadSpec:
    """A synthetic workload; ``iterations`` counts allocations per thread."""

    name: str
    threads: int = 1
    iterations: int = 100_000
    size_kind: str = "uniform"
    size_min: int = 16
    size_max: int = 256
    large_fraction: float = 0.0
    large_size: int = 2 << 20
    lifetime: str = "immediate"
    depth: int = 1
    warmup: int = 0

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.size_min < 1 or self.size_max < self.size_min:
            raise ValueError("sizes must satisfy 1 <= size_min <= size_max")
        if self.size_kind not in SIZE_KINDS:
            raise ValueError(f"size_kind must be one of {SIZE_KINDS}")
        if self.lifetime not in LIFETIMES:
            raise ValueError(f"lifetime must be one of {LIFETIMES}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


WORKLOADS = {
    "threadtest": WorkloadSpec("threadtest", threads=4, iterations=1_000_000,
                               size_min=16, size_max=256, warmup=100_000),
    "threadtest64": WorkloadSpec("threadtest64", threads=4, iterations=2_500_000,
                                 size_kind="fixed", size_min=64, size_max=64, warmup=100_000),
    "swaptions": WorkloadSpec("swaptions", threads=1, iterations=1_000_000,
                              size_min=16, size_max=512, lifetime="fifo", depth=64),
    "dedup": WorkloadSpec("dedup", threads=2, iterations=200_000, size_kind="mixed",
                          size_min=64, size_max=64 << 10, large_fraction=0.002,
                          lifetime="random", depth=2048),
    "mixed": WorkloadSpec("mixed", threads=2, iterations=200_000, size_kind="mixed",
                          size_min=16, size_max=4096, large_fraction=0.01,
                          lifetime="fifo", depth=256),
}


def get_workload(name_or_path):
    if name_or_path in WORKLOADS:
        return WORKLOADS[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return WorkloadSpec.load(path)
    raise KeyError(f"unknown workload {name_or_path!r}; built-ins: {sorted(WORKLOADS)}")


@inline
def _release(st, t, use_system, addr):
    if use_system:
        c_free(addr)
        return 0
    code, where = free_kernel(st, t, addr)
    return 1 if code != 0 else 0


@jit
def run_workload(st, t, use_system, iters, size_kind, size_min, size_max,
                 large_threshold, large_size, lifetime, ring, wrng):
    """Drive one thread's share of a workload; returns the failure count.

    *large_threshold* is the large-object probability scaled to 2**53.
    The ring holds live objects for the fifo/random lifetimes and is
    drained before returning.
    """
    failures = 0
    span = np.uint64(size_max - size_min + 1)
    depth = ring.shape[0]
    thresh = np.uint64(large_threshold)
    for i in range(iters):
        r = rng_next(wrng, 0)
        size = size_min
        if size_kind == 2 and (r >> np.uint64(11)) < thresh:
            size = large_size
        elif size_kind != 0:
            size = size_min + np.int64(rng_next(wrng, 0) % span)
        if use_system:
            addr = c_malloc(size)
        else:
            addr = malloc_kernel(st, t, size)
        if addr <= 0:
            failures += 1
            continue
        c_memset(addr, 0x5A, min(size, TOUCH_BYTES))
        if lifetime == 0:
            failures += _release(st, t, use_system, addr)
        else:
            slot = i % depth if lifetime == 1 else np.int64(rng_next(wrng, 0) % np.uint64(depth))
            old = ring[slot]
            if old != 0:
                failures += _release(st, t, use_system, old)
            ring[slot] = addr
    for k in range(depth):
        if ring[k] != 0:
            failures += _release(st, t, use_system, ring[k])
            ring[k] = 0
    return failures


@dataclass
class BenchResult:
    workload: str
    allocator: str
    threads: int
    iterations: int
    wall_times: list
    peak_rss_kb: int
    failures: int
    freelist_fraction: float
    stats: dict = field(default_factory=dict)

    @property
    def wall_mean(self):
        return statistics.fmean(self.wall_times)

    @property
    def wall_min(self):
        return min(self.wall_times)

    @property
    def wall_cv(self):
        if len(self.wall_times) < 2:
            return 0.0
        return statistics.stdev(self.wall_times) / self.wall_mean

    def record(self):
        out = asdict(self)
        out.update(type="bench", wall_mean=self.wall_mean, wall_min=self.wall_min,
                   wall_cv=self.wall_cv, repeats=len(self.wall_times))
        return out


def _thread_args(spec):
    kind = SIZE_KINDS.index(spec.size_kind)
    life = LIFETIMES.index(spec.lifetime)
    depth = spec.depth if life else 1
    return kind, int(spec.large_fraction * (1 << 53)), life, depth


def _run_once(spec, allocator, config):
    """Execute *spec* in this process; returns a JSON payload for the parent."""
    kind, large_thresh, life, depth = _thread_args(spec)
    use_system = allocator == "system"
    alloc = Allocator(config.with_(max_threads=max(spec.threads, 1)))
    st = alloc.state
    failures = [0] * spec.threads
    marks = {}

    def on_warm():
        marks["before"] = st.stats.copy()
        marks["t0"] = time.perf_counter()

    barrier = threading.Barrier(spec.threads, action=on_warm)

    def worker(k):
        t = alloc.thread_index()
        wrng = seed_states(config.run_seed ^ (0x5EED << 8) ^ k, 1)
        ring = np.zeros(depth, dtype=np.int64)
        args = (kind, spec.size_min, spec.size_max, large_thresh, spec.large_size, life, ring, wrng)
        failures[k] += run_workload(st, t, use_system, spec.warmup, *args)
        barrier.wait()
        failures[k] += run_workload(st, t, use_system, spec.iterations, *args)

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(spec.threads)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    wall = time.perf_counter() - marks["t0"]
    delta = AllocStats.from_rows(st.stats - marks["before"])
    served = delta.freelist_served + delta.bump_served
    payload = {
        "wall": wall,
        "rss_kb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
        "failures": int(sum(failures)),
        "freelist_fraction": delta.freelist_served / served if served else 0.0,
        "stats": alloc.stats().as_dict(),
    }
    alloc.close()
    return json.dumps(payload).encode()


def warm_kernels():
    """Compile (or load) the workload kernels before any fork."""
    cfg = AllocatorConfig.draw(seed=1, bag_size=4 << 20, max_threads=1)
    with Allocator(cfg, region_size=1 << 30) as alloc:
        ring = np.zeros(1, dtype=np.int64)
        wrng = seed_states(1, 1)
        for use_system in (False, True):
            run_workload(alloc.state, 0, use_system, 1, 1, 16, 16, 0, 1 << 21, 0, ring, wrng)


def _one_run(spec, allocator, config, i):
    cfg = config.with_(run_seed=(config.run_seed + i) & 0xFFFFFFFFFFFFFFFF)
    outcome = run_forked(_run_once, spec, allocator, cfg)
    if outcome.exit_code != 0:
        raise RuntimeError(f"bench child failed (exit={outcome.exit_code}, "
                           f"signal={outcome.signal}):\n{outcome.stderr}")
    return json.loads(outcome.stdout)


def _summarize(spec, allocator, runs):
    last = runs[-1]
    under_test = allocator == "fg"
    return BenchResult(
        workload=spec.name, allocator=allocator, threads=spec.threads,
        iterations=spec.iterations, wall_times=[r["wall"] for r in runs],
        peak_rss_kb=max(r["rss_kb"] for r in runs),
        failures=sum(r["failures"] for r in runs),
        freelist_fraction=last["freelist_fraction"] if under_test else 0.0,
        stats=last["stats"] if under_test else {},
    )


def run_bench(spec, allocator="fg", repeat=1, config=None):
    """Run *spec* ``repeat`` times, each in a fresh forked child."""
    if allocator not in ("fg", "system"):
        raise ValueError("allocator must be 'fg' or 'system'")
    config = config or AllocatorConfig.from_env()
    warm_kernels()
    runs = [_one_run(spec, allocator, config, i) for i in range(repeat)]
    return _summarize(spec, allocator, runs)


def run_paired(spec, repeat=1, config=None):
    """Alternate fg and system runs so slow drift in machine speed hits both.

    Returns ``(fg_result, system_result)``; the i-th wall times form a pair.
    """
    config = config or AllocatorConfig.from_env()
    warm_kernels()
    runs = {"fg": [], "system": []}
    for i in range(repeat):
        for name in runs:
            runs[name].append(_one_run(spec, name, config, i))
    return _summarize(spec, "fg", runs["fg"]), _summarize(spec, "system", runs["system"])
