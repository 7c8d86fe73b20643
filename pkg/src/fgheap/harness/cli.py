"""Command-line harness: ``bench``, ``attack`` and ``stats``."""
import argparse
import json
import os
import sys

from ..allocator import Allocator
from ..config import AllocatorConfig
from . import report
from .attacks import CORPUS_DIR, detection_rate, load_corpus, run_attack
from .workloads import get_workload, run_bench, run_paired


def _base_config(args):
    kwargs = {}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    return AllocatorConfig.from_env(**kwargs)


def _emit(records, columns, args):
    if args.jsonl:
        with open(args.jsonl, "w") as fh:
            report.write_jsonl(records, fh)
    if args.format == "jsonl":
        report.write_jsonl(records)
    else:
        print(report.render_table(records, columns))


def cmd_bench(args):
    spec = get_workload(args.workload)
    changes = {}
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.iters is not None:
        changes["iterations"] = args.iters
    if changes:
        spec = type(spec)(**{**spec.__dict__, **changes})
    config = _base_config(args)
    if sorted(args.allocator) == ["fg", "system"]:
        results = list(run_paired(spec, repeat=args.repeat, config=config))
    else:
        results = [run_bench(spec, name, repeat=args.repeat, config=config)
                   for name in dict.fromkeys(args.allocator)]
    rows = [report.bench_row(r) for r in results]
    if len(results) == 2:
        fg, system = results
        rows.append({"type": "bench_ratio", "workload": spec.name, "allocator": "fg/system",
                     "wall_mean": fg.wall_mean / system.wall_mean,
                     "wall_min": fg.wall_min / system.wall_min})
    _emit(rows, report.BENCH_COLUMNS, args)
    return 0 if all(r.failures == 0 for r in results) else 1


def cmd_attack(args):
    cases = load_corpus(args.corpus)
    if args.case:
        cases = [c for c in cases if c.name in args.case]
        if not cases:
            print(f"no case named {args.case}", file=sys.stderr)
            return 2
    seed = args.seed if args.seed is not None else int(os.environ.get("FG_SEED", "1") or 1)
    results = [run_attack(c, repeat=args.repeat, base_seed=seed) for c in cases]
    records = [r.record() for r in results]
    summary = report.attack_summary(results, detection_rate(results))
    if args.format == "jsonl":
        _emit(records + [summary], report.ATTACK_COLUMNS, args)
    else:
        _emit(records, report.ATTACK_COLUMNS, args)
        print(f"\n{summary['passed']}/{summary['cases']} cases met expectations; "
              f"detection rate {summary['detection_rate']:.3f}")
        if args.jsonl:
            with open(args.jsonl, "a") as fh:
                report.write_jsonl([summary], fh)
    return 0 if all(r.passed for r in results) else 1


def cmd_stats(args):
    import numpy as np

    from .workloads import LIFETIMES, SIZE_KINDS, run_workload
    from ..rng import seed_states

    spec = get_workload(args.workload)
    iters = args.iters if args.iters is not None else min(spec.iterations, 100_000)
    with Allocator(_base_config(args)) as alloc:
        ring = np.zeros(spec.depth if spec.lifetime != "immediate" else 1, dtype=np.int64)
        run_workload(alloc.state, alloc.thread_index(), False, iters,
                     SIZE_KINDS.index(spec.size_kind), spec.size_min, spec.size_max,
                     int(spec.large_fraction * (1 << 53)), spec.large_size,
                     LIFETIMES.index(spec.lifetime), ring, seed_states(1, 1))
        stats = alloc.stats().as_dict()
    if args.format == "jsonl":
        report.write_jsonl([{"type": "stats", "workload": spec.name, **stats}])
    else:
        for key, value in stats.items():
            print(f"{key:22s} {value}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fgheap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="overrides FG_SEED")
        p.add_argument("--format", choices=("table", "jsonl"), default="table")
        p.add_argument("--jsonl", metavar="FILE", help="also write JSON lines to FILE")

    b = sub.add_parser("bench", help="time a workload under fg and/or the system allocator")
    b.add_argument("--workload", default="threadtest", help="built-in name or JSON file")
    b.add_argument("--threads", type=int)
    b.add_argument("--iters", type=int, help="allocations per thread")
    b.add_argument("--allocator", choices=("fg", "system"), action="append",
                   help="repeatable; default runs both")
    b.add_argument("--repeat", type=int, default=3)
    common(b)
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("attack", help="replay the attack corpus in isolated children")
    a.add_argument("--corpus", default=str(CORPUS_DIR))
    a.add_argument("--case", action="append")
    a.add_argument("--repeat", type=int, default=None, help="overrides each case's repeat")
    common(a)
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("stats", help="run a workload in-process and print allocator counters")
    s.add_argument("--workload", default="threadtest")
    s.add_argument("--iters", type=int)
    common(s)
    s.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "allocator", "x") is None:
        args.allocator = ["fg", "system"]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
