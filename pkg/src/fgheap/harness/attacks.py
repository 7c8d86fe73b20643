"""Attack corpus: parsing, isolated execution and verdicts.

A corpus file holds one or more cases.  Each case is a block of lines::

    case <name>
    expect detected <Kind> | crashed | survived [rate=<p> tol=<t> | min_rate=<p>]
    repeat <n>
    config <key>=<value> ...
    <action>...

Actions, executed in order inside a forked child with aborting enabled:

    alloc <var> <size>            calloc <var> <count> <size>
    realloc <var> <ref> <size>    free <ref>
    write <ref> <len> [<byte>]    read <ref> <len>
    check <ref> <len> <byte>      (mismatch -> verdict "corrupted")

``<ref>`` is ``<var>``, ``<var>+<n>``, ``<var>-<n>`` or ``outside`` (a
buffer owned by the interpreter, never by the allocator).  Numbers accept
``0x`` prefixes and ``K``/``M`` suffixes; a byte may also be ``~canary``,
the complement of the run's canary, for overwrites that must not collide
with it by chance.  ``#`` starts a comment.
"""
from __future__ import annotations

import ctypes
import re
import shlex
import signal
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .. import _native
from ..allocator import Allocator, warm_up
from ..config import MIB, AllocatorConfig
from ._fork import EXIT_CORRUPTED, run_forked

CORPUS_DIR = Path(__file__).with_name("corpus")
VIOLATION_RE = re.compile(r"^FG-VIOLATION kind=(\S+) addr=(\S+) class=(\S+)", re.M)
OUTCOMES = ("detected", "crashed", "survived")

_ACTIONS = {
    "alloc": 2, "calloc": 3, "realloc": 3, "free": 1, "write": (2, 3), "read": 2, "check": 3,
}


class CorpusError(ValueError):
    pass


def parse_number(text):
    text = text.strip()
    scale = 1
    if text[-1] in "kK":
        scale, text = 1 << 10, text[:-1]
    elif text[-1] in "mM":
        scale, text = 1 << 20, text[:-1]
    return int(text, 0) * scale


@dataclass
class Expectation:
    outcome: str
    kind: str | None = None
    rate: float | None = None
    tol: float = 0.0
    min_rate: float | None = None

    @property
    def verdict(self):
        return f"detected({self.kind})" if self.outcome == "detected" else self.outcome

    @property
    def probabilistic(self):
        return self.rate is not None or self.min_rate is not None

    def __str__(self):
        text = self.verdict
        if self.rate is not None:
            text += f" rate={self.rate:g}±{self.tol:g}"
        if self.min_rate is not None:
            text += f" rate>={self.min_rate:g}"
        return text


@dataclass
class AttackCase:
    name: str
    expect: Expectation
    actions: list
    repeat: int = 1
    config: dict = field(default_factory=dict)


def _parse_expect(words, where):
    if not words or words[0] not in OUTCOMES:
        raise CorpusError(f"{where}: expect needs one of {OUTCOMES}")
    exp = Expectation(words[0])
    rest = words[1:]
    if exp.outcome == "detected":
        if not rest:
            raise CorpusError(f"{where}: detected needs a violation kind")
        exp.kind, rest = rest[0], rest[1:]
    for word in rest:
        key, _, value = word.partition("=")
        if key == "rate":
            exp.rate = float(value)
        elif key == "tol":
            exp.tol = float(value)
        elif key == "min_rate":
            exp.min_rate = float(value)
        else:
            raise CorpusError(f"{where}: unknown expect option {key!r}")
    return exp


def parse_corpus(text, source="<corpus>"):
    cases = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        words = shlex.split(line)
        op, args = words[0], words[1:]
        if op == "case":
            if len(args) != 1:
                raise CorpusError(f"{where}: case takes one name")
            current = {"name": args[0], "expect": None, "actions": [], "repeat": 1, "config": {}}
            cases.append(current)
            continue
        if current is None:
            raise CorpusError(f"{where}: {op!r} before any case")
        if op == "expect":
            current["expect"] = _parse_expect(args, where)
        elif op == "repeat":
            current["repeat"] = int(args[0])
        elif op == "config":
            for item in args:
                key, _, value = item.partition("=")
                current["config"][key] = value
        elif op in _ACTIONS:
            arity = _ACTIONS[op]
            allowed = arity if isinstance(arity, tuple) else (arity,)
            if len(args) not in allowed:
                raise CorpusError(f"{where}: {op} takes {arity} arguments")
            current["actions"].append((op, tuple(args)))
        else:
            raise CorpusError(f"{where}: unknown action {op!r}")
    out = []
    for case in cases:
        if case["expect"] is None:
            raise CorpusError(f"{source}: case {case['name']} has no expect line")
        out.append(AttackCase(**case))
    return out


def load_corpus(path=CORPUS_DIR):
    path = Path(path)
    files = sorted(path.glob("*.fgs")) if path.is_dir() else [path]
    cases = []
    for f in files:
        cases.extend(parse_corpus(f.read_text(), str(f)))
    return cases


def case_config(case, seed):
    kwargs = {"seed": seed, "abort_on_violation": True, "max_threads": 4}
    for key, value in case.config.items():
        if key == "guard_budget":
            kwargs[key] = float(value)
        elif key == "override_weight_w":
            kwargs[key] = None if value in ("0", "off") else int(value)
        elif key == "destroy_on_free":
            kwargs[key] = value in ("1", "true")
        elif key == "bag_size_mb":
            kwargs["bag_size"] = int(value) * MIB
        elif key == "force_chain":
            kwargs[key] = int(value)
        else:
            raise CorpusError(f"case {case.name}: unknown config key {key!r}")
    return AllocatorConfig.draw(**kwargs)


_OUTSIDE = ctypes.create_string_buffer(4096)


def _resolve(ref, env):
    if ref == "outside":
        return ctypes.addressof(_OUTSIDE) + 64
    m = re.fullmatch(r"([A-Za-z_]\w*)(?:([+-])(\w+))?", ref)
    if not m or m.group(1) not in env:
        raise CorpusError(f"bad reference {ref!r}")
    addr = env[m.group(1)]
    if m.group(2):
        delta = parse_number(m.group(3))
        addr = addr + delta if m.group(2) == "+" else addr - delta
    return addr


def _byte(token, config):
    if token == "~canary":
        return config.canary_byte ^ 0xFF
    return parse_number(token)


def execute(case, config):
    """Run the case's script in this process (meant to be a forked child)."""
    alloc = Allocator(config)
    env = {}
    for op, args in case.actions:
        if op == "alloc":
            env[args[0]] = alloc.malloc(parse_number(args[1]))
        elif op == "calloc":
            env[args[0]] = alloc.calloc(parse_number(args[1]), parse_number(args[2]))
        elif op == "realloc":
            env[args[0]] = alloc.realloc(_resolve(args[1], env), parse_number(args[2]))
        elif op == "free":
            alloc.free(_resolve(args[0], env))
        elif op == "write":
            value = _byte(args[2], config) if len(args) == 3 else 0x41
            _native.fill(_resolve(args[0], env), value, parse_number(args[1]))
        elif op == "read":
            _native.read_bytes(_resolve(args[0], env), parse_number(args[1]))
        elif op == "check":
            want = bytes([_byte(args[2], config)]) * parse_number(args[1])
            if _native.read_bytes(_resolve(args[0], env), len(want)) != want:
                raise SystemExit(EXIT_CORRUPTED)
    return b""


def verdict_of(outcome):
    m = VIOLATION_RE.search(outcome.stderr)
    if m and outcome.signal == signal.SIGABRT:
        return f"detected({m.group(1)})"
    if outcome.faulted:
        return "crashed"
    if outcome.exit_code == 0:
        return "survived"
    if outcome.exit_code == EXIT_CORRUPTED:
        return "corrupted"
    return "error"


@dataclass
class CaseResult:
    name: str
    expected: Expectation
    verdicts: list

    @property
    def counts(self):
        return dict(Counter(self.verdicts))

    @property
    def rate(self):
        return self.verdicts.count(self.expected.verdict) / len(self.verdicts)

    @property
    def passed(self):
        exp = self.expected
        if exp.rate is not None:
            return abs(self.rate - exp.rate) <= exp.tol
        if exp.min_rate is not None:
            return self.rate >= exp.min_rate
        return self.rate == 1.0

    def record(self):
        return {"type": "attack", "case": self.name, "expected": str(self.expected),
                "verdicts": self.counts, "repetitions": len(self.verdicts),
                "rate": self.rate, "passed": self.passed}


def run_attack(case, repeat=None, base_seed=1):
    """Execute *case* ``repeat`` times with seeds ``base_seed + i``."""
    n = case.repeat if repeat is None else repeat
    warm_up()
    verdicts = []
    for i in range(n):
        config = case_config(case, base_seed + i)
        verdicts.append(verdict_of(run_forked(execute, case, config)))
    return CaseResult(case.name, case.expect, verdicts)


def detection_rate(results):
    """Fraction of repetitions of detection-expecting cases that detected the right kind."""
    hits = total = 0
    for res in results:
        if res.expected.outcome == "detected":
            hits += res.verdicts.count(res.expected.verdict)
            total += len(res.verdicts)
    return hits / total if total else 0.0
