"""Allocator configuration and its environment-variable surface."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .rng import splitmix64

MIB = 1 << 20
BAG_SIZES = (4 * MIB, 8 * MIB, 16 * MIB, 32 * MIB)
LARGE_THRESHOLD = 1 * MIB


@dataclass(frozen=True)
class AllocatorConfig:
    """Per-run parameters.

    ``bag_size`` and ``canary_byte`` are normally drawn once per execution
    by :meth:`draw`; constructing the dataclass directly pins them.
    ``override_weight_w=None`` disables the bump-pointer override and
    ``force_chain`` pins every allocation and free to one chain; both exist
    for deterministic tests.
    """

    bag_size: int
    canary_byte: int
    guard_budget: float = 0.10
    override_weight_w: int | None = 16
    destroy_on_free: bool = False
    abort_on_violation: bool = True
    seed: int | None = None
    max_threads: int = 128
    large_threshold: int = LARGE_THRESHOLD
    force_chain: int | None = None
    run_seed: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.bag_size not in BAG_SIZES:
            raise ValueError(f"bag_size must be one of {BAG_SIZES}, got {self.bag_size}")
        if not 0.0 <= self.guard_budget <= 0.5:
            raise ValueError(f"guard_budget must be in [0, 0.5], got {self.guard_budget}")
        if self.override_weight_w is not None and self.override_weight_w < 1:
            raise ValueError("override_weight_w must be >= 1")
        if not 0 <= self.canary_byte <= 0xFF:
            raise ValueError("canary_byte must fit in a byte")
        if self.max_threads < 1:
            raise ValueError("max_threads must be positive")
        if self.large_threshold != LARGE_THRESHOLD:
            raise ValueError("large_threshold is fixed at 1 MiB")
        if self.force_chain is not None and not 0 <= self.force_chain < 4:
            raise ValueError("force_chain must be in 0..3")
        if self.seed is not None and self.run_seed == 0:
            object.__setattr__(self, "run_seed", self.seed & 0xFFFFFFFFFFFFFFFF)

    @classmethod
    def draw(cls, seed=None, bag_size=None, canary_byte=None, **kwargs):
        """Build a config, drawing the per-execution randomized fields.

        Without *seed* the draw uses OS entropy, so bag size and canary
        change from run to run.
        """
        run_seed = seed if seed is not None else int.from_bytes(os.urandom(8), "little")
        run_seed &= 0xFFFFFFFFFFFFFFFF
        state, r = splitmix64(run_seed ^ 0xA0761D6478BD642F)
        if bag_size is None:
            bag_size = BAG_SIZES[r & 3]
        state, r = splitmix64(state)
        if canary_byte is None:
            canary_byte = 1 + r % 255  # never zero: fresh pages must not look intact
        return cls(bag_size=bag_size, canary_byte=canary_byte, seed=seed,
                   run_seed=run_seed, **kwargs)

    @classmethod
    def from_env(cls, environ=None, **overrides):
        env = os.environ if environ is None else environ
        kwargs = {}
        if "FG_GUARD_BUDGET" in env:
            kwargs["guard_budget"] = int(env["FG_GUARD_BUDGET"]) / 100.0
        if "FG_OVERRIDE_W" in env:
            kwargs["override_weight_w"] = int(env["FG_OVERRIDE_W"])
        if "FG_DESTROY_ON_FREE" in env:
            kwargs["destroy_on_free"] = env["FG_DESTROY_ON_FREE"] == "1"
        if "FG_ABORT" in env:
            kwargs["abort_on_violation"] = env["FG_ABORT"] != "0"
        if env.get("FG_SEED", "") != "":
            kwargs["seed"] = int(env["FG_SEED"])
        if "FG_BAG_SIZE_MB" in env:
            kwargs["bag_size"] = int(env["FG_BAG_SIZE_MB"]) * MIB
        kwargs.update(overrides)
        return cls.draw(**kwargs)

    def with_(self, **changes):
        return replace(self, **changes)
