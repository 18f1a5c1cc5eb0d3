"""Vertex partitioning, inside-out kernel order and the task DAG for one round.

A round visits every unordered part pair once.  Each visit is a kernel that
needs both part submatrices resident in arena bins and its sample pool in a
pool bin.  The DAG holds three task kinds:

* ``swap``   loads a part into a submatrix bin, writing the evicted part back;
* ``copy``   moves the pool of a kernel into the first free pool bin;
* ``kernel`` applies the pool to the two resident submatrices.
"""

import math
from dataclasses import dataclass, field

import numpy as np

SUBMATRIX_ITEM = 4   # bytes per embedding entry
POOL_ENTRY = 8       # two int32 per pool entry
KERNEL_LANES = 2


class PartitionConfigError(ValueError):
    pass


@dataclass
class PartitionConfig:
    sub_bins: int = 3
    pool_bins: int = 2
    B: int = 5
    parts: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sub_bins < 2:
            raise PartitionConfigError("at least 2 submatrix bins are required")
        if self.pool_bins < 1:
            raise PartitionConfigError("at least 1 pool bin is required")
        if self.B < 1:
            raise PartitionConfigError("B must be >= 1")
        if self.parts is not None and self.parts < 1:
            raise PartitionConfigError("parts must be >= 1")


@dataclass
class PartitionPlan:
    K: int
    part_of: np.ndarray
    local_id: np.ndarray
    parts: list
    sub_bins: int = 3
    pool_bins: int = 2
    B: int = 5

    @property
    def max_part(self) -> int:
        return max((len(p) for p in self.parts), default=0)

    def validate(self):
        n = len(self.part_of)
        allv = np.concatenate(self.parts) if self.parts else np.empty(0, np.int64)
        assert len(allv) == n and np.array_equal(np.sort(allv), np.arange(n))
        sizes = [len(p) for p in self.parts]
        assert max(sizes) - min(sizes) <= 1
        for k, p in enumerate(self.parts):
            assert np.all(self.part_of[p] == k)
            assert np.array_equal(self.local_id[p], np.arange(len(p)))


def arena_bytes(n, K, d, sub_bins, pool_bins, B):
    """Bytes for ``sub_bins`` part submatrices plus ``pool_bins`` full pools."""
    rows = math.ceil(n / K)
    return sub_bins * rows * d * SUBMATRIX_ITEM + pool_bins * B * 2 * rows * POOL_ENTRY


def choose_parts(n, d, budget_bytes, cfg: PartitionConfig) -> int:
    """Smallest K >= sub_bins whose arena fits the budget."""
    lo = cfg.sub_bins
    hi = max(n, lo)
    if arena_bytes(n, hi, d, cfg.sub_bins, cfg.pool_bins, cfg.B) > budget_bytes:
        raise PartitionConfigError(
            f"a budget of {budget_bytes} bytes cannot hold {cfg.sub_bins} submatrices "
            f"and {cfg.pool_bins} pools even with one vertex per part")
    # arena size is non-increasing in K, so bisect
    while lo < hi:
        mid = (lo + hi) // 2
        if arena_bytes(n, mid, d, cfg.sub_bins, cfg.pool_bins, cfg.B) <= budget_bytes:
            hi = mid
        else:
            lo = mid + 1
    return lo


def make_partition(g, budget_bytes, d, cfg: PartitionConfig | None = None) -> PartitionPlan:
    """Seeded random permutation of V cut into K near-equal chunks.

    K is ``cfg.parts`` when given, otherwise the smallest feasible value for
    the byte budget.
    """
    cfg = cfg or PartitionConfig()
    n = g.vertex_count if hasattr(g, "vertex_count") else int(g)
    if cfg.parts is not None:
        K = cfg.parts
        if budget_bytes is not None and arena_bytes(n, K, d, cfg.sub_bins, cfg.pool_bins, cfg.B) > budget_bytes:
            raise PartitionConfigError(f"K={K} does not fit a budget of {budget_bytes} bytes")
    else:
        if budget_bytes is None:
            raise PartitionConfigError("either a budget or an explicit part count is required")
        K = choose_parts(n, d, budget_bytes, cfg)
    perm = np.random.default_rng(cfg.seed).permutation(n)
    parts = [np.sort(c).astype(np.int64) for c in np.array_split(perm, K)]
    part_of = np.empty(n, np.int32)
    local_id = np.empty(n, np.int32)
    for k, p in enumerate(parts):
        part_of[p] = k
        local_id[p] = np.arange(len(p))
    return PartitionPlan(K, part_of, local_id, parts, cfg.sub_bins, cfg.pool_bins, cfg.B)


def kernel_order(K: int):
    """Inside-out order: (0,0), (1,0), (1,1), (2,0), ... of length K(K+1)/2."""
    if K < 1:
        raise ValueError("K must be >= 1")
    a, b = 0, 0
    out = [(0, 0)]
    for _ in range(K * (K + 1) // 2 - 1):
        if a == b:
            a, b = a + 1, 0
        else:
            b += 1
        out.append((a, b))
    return out


@dataclass
class Task:
    tid: int
    kind: str           # "swap" | "copy" | "kernel"
    t: int              # position in the kernel order
    part: int = -1      # swap: part loaded
    evict: int = -1     # swap: part written back (-1 if the bin was empty)
    bin: int = -1       # swap: target bin
    pair: tuple = ()    # copy/kernel
    bins: tuple = ()    # kernel: bins holding (a, b)
    deps: list = field(default_factory=list)

    @property
    def key(self):
        rank = {"swap": 0, "copy": 1, "kernel": 2}[self.kind]
        return (self.t, rank, self.bin)


@dataclass
class TaskDag:
    tasks: list
    order: list
    final_bins: list
    succ: list = field(default_factory=list)

    def __post_init__(self):
        self.succ = [[] for _ in self.tasks]
        for task in self.tasks:
            for dep in task.deps:
                self.succ[dep].append(task.tid)

    def count(self, kind):
        return sum(1 for task in self.tasks if task.kind == kind)

    def topological_order(self):
        """Kahn's algorithm; raises ValueError on a cycle."""
        pending = [len(t.deps) for t in self.tasks]
        ready = [t.tid for t in self.tasks if not t.deps]
        out = []
        while ready:
            tid = ready.pop()
            out.append(tid)
            for s in self.succ[tid]:
                pending[s] -= 1
                if pending[s] == 0:
                    ready.append(s)
        if len(out) != len(self.tasks):
            raise ValueError("task graph has a cycle")
        return out


def _next_use(order, start, part):
    for t in range(start, len(order)):
        if part in order[t]:
            return t
    return len(order)


def build_dag(order, plan: PartitionPlan, initial_bins=None, lanes: int = KERNEL_LANES) -> TaskDag:
    """Assign parts to submatrix bins along ``order`` and wire the dependencies.

    A missing part goes to an empty bin if there is one, otherwise it evicts
    the resident part whose next use is farthest away (never a part of the
    current kernel).  ``initial_bins`` is the residency left by the previous
    round.
    """
    P, S = plan.sub_bins, plan.pool_bins
    if P < 2:
        raise PartitionConfigError("at least 2 submatrix bins are required")
    bins = list(initial_bins) if initial_bins is not None else [None] * P
    if len(bins) != P:
        raise ValueError("initial residency does not match the bin count")

    tasks = []
    users = [[] for _ in range(P)]     # kernels that used the current part of each bin
    loader = [None] * P                # swap task that loaded the current part of each bin
    last_evict = {}                    # part -> swap task that last wrote it back
    kernels, copies = [], []

    def add(**kw):
        task = Task(len(tasks), **kw)
        tasks.append(task)
        return task

    for t, (a, b) in enumerate(order):
        need = [a] if a == b else [a, b]
        for p in need:
            if p in bins:
                continue
            if None in bins:
                k = bins.index(None)
            else:
                cands = [k for k in range(P) if bins[k] not in need]
                k = max(cands, key=lambda k: (_next_use(order, t, bins[k]), -k))
            deps = list(users[k])
            if loader[k] is not None:
                deps.append(loader[k])
            if p in last_evict:
                deps.append(last_evict[p])
            swap = add(kind="swap", t=t, part=p, evict=-1 if bins[k] is None else bins[k],
                       bin=k, deps=sorted(set(deps)))
            if bins[k] is not None:
                last_evict[bins[k]] = swap.tid
            bins[k] = p
            users[k] = []
            loader[k] = swap.tid

        cdeps = []
        if copies:
            cdeps.append(copies[-1].tid)
        # every kernel at least S positions back has released its pool bin
        for back in range(S, S + lanes):
            if t - back >= 0:
                cdeps.append(kernels[t - back].tid)
        copy = add(kind="copy", t=t, pair=(a, b), deps=sorted(set(cdeps)))
        copies.append(copy)

        ka, kb = bins.index(a), bins.index(b)
        kdeps = [copy.tid]
        for k in {ka, kb}:
            if loader[k] is not None:
                kdeps.append(loader[k])
        if t - lanes >= 0:
            kdeps.append(kernels[t - lanes].tid)
        kern = add(kind="kernel", t=t, pair=(a, b), bins=(ka, kb), deps=sorted(set(kdeps)))
        kernels.append(kern)
        for k in {ka, kb}:
            users[k].append(kern.tid)

    return TaskDag(tasks, list(order), bins)
