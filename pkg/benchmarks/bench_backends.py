"""Compare the numba kernels with the plain-Python fallback.

Each backend runs in its own interpreter (the choice is made at import time
from ``FG_DISABLE_JIT``).  Two measurements per backend:

* ``kernel``: the workload loop itself (malloc/free pairs driven from the
  kernel layer, so under numba nothing crosses into Python);
* ``api``: the same pairs issued one call at a time through ``Allocator``.

Usage::

    python3 benchmarks/bench_backends.py [--pairs N] [--json]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from fgheap import Allocator, AllocatorConfig, BACKEND
from fgheap.harness.workloads import run_workload, warm_kernels
from fgheap.rng import seed_states

pairs = int(sys.argv[1])
warm_kernels()
cfg = AllocatorConfig.draw(seed=9, max_threads=1, bag_size=8 << 20)
out = {"backend": BACKEND, "pairs": pairs}
with Allocator(cfg, region_size=4 << 30) as a:
    ring = np.zeros(1, dtype=np.int64)
    t = a.thread_index()
    run_workload(a.state, t, False, 100, 0, 64, 64, 0, 1 << 21, 0, ring, seed_states(1, 1))
    t0 = time.perf_counter()
    run_workload(a.state, t, False, pairs, 0, 64, 64, 0, 1 << 21, 0, ring, seed_states(2, 1))
    out["kernel_ns"] = (time.perf_counter() - t0) / pairs * 1e9
    t0 = time.perf_counter()
    for _ in range(pairs):
        a.free(a.malloc(64))
    out["api_ns"] = (time.perf_counter() - t0) / pairs * 1e9
print(json.dumps(out))
"""


def run(disable, pairs):
    env = dict(os.environ)
    env.pop("FG_DISABLE_JIT", None)
    if disable:
        env["FG_DISABLE_JIT"] = "1"
    proc = subprocess.run([sys.executable, "-c", CHILD, str(pairs)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pairs", type=int, default=20_000,
                        help="malloc/free pairs per measurement (the Python path is slow)")
    parser.add_argument("--json", action="store_true", help="print JSON lines instead of a table")
    args = parser.parse_args(argv)

    rows = [run(False, args.pairs), run(True, args.pairs)]
    if args.json:
        for row in rows:
            print(json.dumps(row))
        return 0
    print(f"{'backend':8s} {'pairs':>8s} {'kernel ns/pair':>15s} {'api ns/pair':>12s}")
    for row in rows:
        print(f"{row['backend']:8s} {row['pairs']:8d} {row['kernel_ns']:15.1f} {row['api_ns']:12.1f}")
    jit, py = rows
    print(f"\nkernel speedup from numba: {py['kernel_ns'] / jit['kernel_ns']:.0f}x; "
          f"api speedup: {py['api_ns'] / jit['api_ns']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
