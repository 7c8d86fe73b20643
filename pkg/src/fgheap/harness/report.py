"""Result serialization: JSON lines for machines, a fixed-width table for people."""
import json
import sys

BENCH_COLUMNS = ("workload", "allocator", "threads", "iterations", "repeats", "wall_mean",
                 "wall_min", "wall_cv", "peak_rss_kb", "freelist_fraction", "failures",
                 "map_calls", "unmap_calls", "protect_calls", "madvise_calls", "guard_granules")
ATTACK_COLUMNS = ("case", "expected", "repetitions", "rate", "passed", "verdicts")


def bench_row(result):
    rec = result.record()
    stats = rec.pop("stats") or {}
    for key in ("map_calls", "unmap_calls", "protect_calls", "madvise_calls", "guard_granules"):
        rec[key] = stats.get(key, "")
    return rec


def write_jsonl(records, stream=None):
    stream = stream or sys.stdout
    for rec in records:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.4g}"
    if isinstance(value, dict):
        return ",".join(f"{k}:{v}" for k, v in sorted(value.items()))
    return str(value)


def render_table(records, columns):
    rows = [[_fmt(rec.get(col, "")) for col in columns] for rec in records]
    widths = [max([len(col)] + [len(r[i]) for r in rows]) for i, col in enumerate(columns)]
    lines = ["  ".join(col.ljust(w) for col, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows)
    return "\n".join(lines)


def attack_summary(results, rate):
    return {"type": "attack_summary", "cases": len(results),
            "passed": sum(r.passed for r in results), "detection_rate": rate}
