"""Array-backed allocator state shared by all kernels."""
from collections import namedtuple

HeapState = namedtuple(
    "HeapState",
    ["params", "heap", "shadow", "guards", "chains", "rng", "stats",
     "large_keys", "large_vals", "large_meta"],
)

# chains[thread, class, chain, field]
C_CUR = 0   # heap offset of the first never-allocated slot
C_HEAD = 1  # shadow address of the freelist head, 0 when empty
C_TAIL = 2
C_HEAP = 3  # heap currently consumed by this chain; -1 before first use
N_CHAIN_FIELDS = 4
N_CHAINS = 4

# violation codes; 0 means the operation succeeded
V_OK = 0
V_OUTSIDE = 1
V_UNALIGNED = 2
V_NEVER = 3
V_DOUBLE = 4
V_OVERFLOW = 5
V_UNKNOWN_LARGE = 6
N_VIOLATION_KINDS = 6

VIOLATION_TAGS = {
    V_OUTSIDE: "InvalidFree/OutsideHeap",
    V_UNALIGNED: "InvalidFree/Unaligned",
    V_NEVER: "InvalidFree/NeverAllocated",
    V_DOUBLE: "DoubleFree",
    V_OVERFLOW: "OverflowDetected",
    V_UNKNOWN_LARGE: "InvalidFree/UnknownLarge",
}

# stats[thread, column]; each thread only writes its own row
S_ALLOCS = 0
S_FREES = 1
S_FREELIST = 2
S_BUMP = 3
S_OVERRIDE = 4
S_GRANULES = 5
S_GUARDS = 6
S_MAP = 7
S_UNMAP = 8
S_PROTECT = 9
S_MADVISE = 10
S_LARGE_ALLOCS = 11
S_LARGE_FREES = 12
S_CHAIN0 = 13
S_VIOL0 = S_CHAIN0 + N_CHAINS - 1  # indexed by violation code (1-based)
S_CLASS0 = S_VIOL0 + N_VIOLATION_KINDS + 1

# large_meta layout: [live count, history cursor, freed-base history...]
M_COUNT = 0
M_HIST_POS = 1
M_HIST0 = 2
LARGE_HISTORY = 4096
