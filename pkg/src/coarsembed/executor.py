"""Budgeted execution of the partitioned trainer.

The embedding lives in a backing store, one submatrix per part.  A round
runs the task DAG of :mod:`partition` with a team of worker threads: swap
tasks move submatrices between the store and the arena bins, copy tasks
place sample pools into pool bins and kernel tasks run the hot loop on the
two resident submatrices.  Pools are produced ahead of time on separate
threads.  Every task start and end is stamped from one global sequence so the
trace can be checked for ordering and residency after the fact.
"""

import heapq
import itertools
import json
import logging
import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._jit import TAG_POOL, TAG_POOL_NEG, derive_seed
from ._kernels import pool_kernel
from .formats import read_gemb, write_gemb
from .partition import PartitionPlan, arena_bytes, build_dag, kernel_order
from .sampling import fill_pool
from .trainer import init_embedding, lr_at

log = logging.getLogger(__name__)


class SchedulerError(RuntimeError):
    """The DAG could not make progress or a residency rule was broken."""


class PartStore:
    """Backing store for part submatrices: host arrays or one GEMB file per part."""

    def __init__(self, plan: PartitionPlan, d: int, directory=None):
        self.plan = plan
        self.d = d
        self.directory = directory
        self._mem = {}
        if directory is not None:
            os.makedirs(directory, exist_ok=True)

    def _path(self, p):
        return os.path.join(self.directory, f"part_{p}.gemb")

    def put(self, p, rows):
        rows = np.ascontiguousarray(rows, dtype=np.float32)
        if self.directory is None:
            self._mem[p] = rows.copy()
        else:
            write_gemb(rows, self._path(p))

    def get(self, p):
        if self.directory is None:
            return self._mem[p]
        return read_gemb(self._path(p))

    @classmethod
    def from_matrix(cls, M, plan, directory=None):
        store = cls(plan, M.shape[1], directory)
        for p, verts in enumerate(plan.parts):
            store.put(p, M[verts])
        return store

    def assemble(self):
        n = len(self.plan.part_of)
        M = np.empty((n, self.d), np.float32)
        for p, verts in enumerate(self.plan.parts):
            M[verts] = self.get(p)
        return M


class DeviceArena:
    """Fixed bins standing in for device memory.

    ``sub`` holds ``P`` submatrix bins sized for the largest part; ``pools``
    holds up to ``S`` resident sample pools.
    """

    def __init__(self, plan: PartitionPlan, d: int, budget_bytes=None):
        self.plan = plan
        self.d = d
        n = len(plan.part_of)
        self.budget_bytes = budget_bytes
        self.used_bytes = arena_bytes(n, plan.K, d, plan.sub_bins, plan.pool_bins, plan.B)
        if budget_bytes is not None and self.used_bytes > budget_bytes:
            raise SchedulerError(f"arena needs {self.used_bytes} bytes, budget is {budget_bytes}")
        self.sub = np.zeros((plan.sub_bins, max(plan.max_part, 1), d), np.float32)
        self.resident = [None] * plan.sub_bins
        self.pools = [None] * plan.pool_bins
        self._pool_lock = threading.Lock()

    def view(self, k):
        p = self.resident[k]
        return self.sub[k, :len(self.plan.parts[p])]

    def swap(self, k, part, store: PartStore):
        if part in self.resident:
            raise SchedulerError(f"part {part} is already resident")
        old = self.resident[k]
        if old is not None:
            store.put(old, self.view(k))
        self.resident[k] = part
        self.view(k)[:] = store.get(part)

    def flush(self, store: PartStore):
        for k, p in enumerate(self.resident):
            if p is not None:
                store.put(p, self.view(k))
            self.resident[k] = None

    def claim_pool_bin(self, pool):
        """First free pool bin wins."""
        with self._pool_lock:
            for k, slot in enumerate(self.pools):
                if slot is None:
                    self.pools[k] = pool
                    return k
        raise SchedulerError("no free pool bin")

    def release_pool_bin(self, k):
        with self._pool_lock:
            self.pools[k] = None


class BudgetCounter:
    """Global positive-update counter capped at ``limit``."""

    def __init__(self, limit: int, value: int = 0):
        self.limit = int(limit)
        self.value = int(value)
        self._lock = threading.Lock()

    def claim(self, want: int) -> int:
        with self._lock:
            got = max(0, min(want, self.limit - self.value))
            self.value += got
            return got


class PoolProducer:
    """Fills the pools of a round in kernel order, ``ahead`` pools in advance."""

    def __init__(self, g, plan, order, B, seed, round_idx, walk_window=0, threads=1, ahead=4):
        self._args = (g, plan, B, seed, walk_window)
        self._order = order
        self._base = round_idx * len(order)
        self._ex = ThreadPoolExecutor(max(1, threads), thread_name_prefix="pool")
        self._futures = {}
        self._next = 0
        self._ahead = ahead
        self._lock = threading.Lock()
        with self._lock:
            self._top_up()

    def _top_up(self):
        while self._next < len(self._order) and len(self._futures) < self._ahead:
            t = self._next
            g, plan, B, seed, ww = self._args
            self._futures[t] = self._ex.submit(fill_pool, g, plan, self._order[t], B,
                                               derive_seed(seed, TAG_POOL),
                                               self._base + t, ww)
            self._next += 1

    def get(self, t):
        with self._lock:
            fut = self._futures.pop(t)
            self._top_up()
        return fut.result()

    def close(self):
        self._ex.shutdown(wait=True, cancel_futures=True)


@dataclass
class TraceRecord:
    tid: int
    kind: str
    t: int
    start: int
    end: int
    worker: int
    bins: tuple = ()
    parts: tuple = ()
    resident_ok: bool = True
    updates: int = 0
    wall_start: float = 0.0
    wall_end: float = 0.0


@dataclass
class RoundStats:
    positives: int = 0
    swaps: int = 0
    kernels: int = 0
    trace: list = field(default_factory=list)


def run_dag(dag, handlers, workers=1, shuffle_seed=None):
    """Drain ``dag`` with a worker team; returns the trace.

    Ready tasks are taken lowest key first (kernel order, swap before copy
    before kernel), so one worker replays the serial schedule exactly.  With
    ``shuffle_seed`` a random ready task is taken instead, to explore
    interleavings.
    """
    n = len(dag.tasks)
    pending = [len(t.deps) for t in dag.tasks]
    ready = [(dag.tasks[i].key, i) for i in range(n) if pending[i] == 0]
    heapq.heapify(ready)
    cond = threading.Condition()
    seq = itertools.count()
    trace = []
    state = {"done": 0, "running": 0, "error": None}
    pick_rng = random.Random(shuffle_seed) if shuffle_seed is not None else None

    def worker(wid):
        while True:
            with cond:
                while not ready and state["done"] < n and state["error"] is None:
                    if state["running"] == 0:
                        state["error"] = SchedulerError("no ready task but the DAG is incomplete")
                        cond.notify_all()
                        break
                    cond.wait()
                if state["error"] is not None or state["done"] >= n:
                    return
                if pick_rng is not None:
                    idx = pick_rng.randrange(len(ready))
                    ready[idx], ready[-1] = ready[-1], ready[idx]
                    _, tid = ready.pop()
                    heapq.heapify(ready)
                else:
                    _, tid = heapq.heappop(ready)
                state["running"] += 1
                start = next(seq)
            wall_start = time.perf_counter()
            task = dag.tasks[tid]
            try:
                rec = handlers[task.kind](task)
            except BaseException as exc:
                with cond:
                    state["error"] = exc
                    state["running"] -= 1
                    cond.notify_all()
                return
            with cond:
                rec.tid, rec.kind, rec.t = tid, task.kind, task.t
                rec.start, rec.end, rec.worker = start, next(seq), wid
                rec.wall_start, rec.wall_end = wall_start, time.perf_counter()
                trace.append(rec)
                state["running"] -= 1
                state["done"] += 1
                for s in dag.succ[tid]:
                    pending[s] -= 1
                    if pending[s] == 0:
                        heapq.heappush(ready, (dag.tasks[s].key, s))
                cond.notify_all()

    if workers == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(w,)) for w in range(workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    if state["error"] is not None:
        raise state["error"]
    return trace


def kernel_rates(lr, round_idx, L, B, e):
    """Learning rate for each kernel of a round.

    A round advances training by about B epochs, so kernel t of round r sits
    at epoch (r + t / L) * B and decays like the in-memory per-epoch rate.
    """
    return np.array([lr_at(lr, (round_idx + t / L) * B, e) for t in range(L)])


def run_round(dag, arena: DeviceArena, pools: PoolProducer, store: PartStore, lr, negatives,
              seed, round_idx, counter: BudgetCounter, workers=1, shuffle_seed=None) -> RoundStats:
    """Execute one round.  Kernels stop consuming pools once ``counter`` is exhausted.

    ``lr`` is a single rate or one rate per position of the kernel order.
    """
    stats = RoundStats()
    copied = {}
    base = round_idx * len(dag.order)
    neg_seed = derive_seed(seed, TAG_POOL_NEG)
    rates = np.broadcast_to(np.asarray(lr, dtype=np.float64), (len(dag.order),))

    def do_swap(task):
        arena.swap(task.bin, task.part, store)
        return TraceRecord(0, "", 0, 0, 0, 0, bins=(task.bin,), parts=(task.part,))

    def do_copy(task):
        pool = pools.get(task.t)
        k = arena.claim_pool_bin(pool)
        copied[task.t] = k
        return TraceRecord(0, "", 0, 0, 0, 0, bins=(k,), parts=task.pair)

    def do_kernel(task):
        a, b = task.pair
        ka, kb = task.bins
        ok = arena.resident[ka] == a and arena.resident[kb] == b
        if not ok:
            raise SchedulerError(f"kernel {task.pair} started without its parts resident")
        pk = copied.pop(task.t)
        pool = arena.pools[pk]
        count = counter.claim(len(pool))
        if count:
            pool_kernel(arena.view(ka), arena.view(kb), pool.src, pool.pos, pool.n_fwd, count,
                        float(rates[task.t]), negatives, neg_seed, base + task.t)
        ok = arena.resident[ka] == a and arena.resident[kb] == b
        arena.release_pool_bin(pk)
        return TraceRecord(0, "", 0, 0, 0, 0, bins=(ka, kb), parts=(a, b), resident_ok=ok,
                           updates=count)

    handlers = {"swap": do_swap, "copy": do_copy, "kernel": do_kernel}
    stats.trace = run_dag(dag, handlers, workers, shuffle_seed)
    for rec in stats.trace:
        if rec.kind == "kernel":
            stats.kernels += 1
            stats.positives += rec.updates
            if not rec.resident_ok:
                raise SchedulerError(f"part left the arena during kernel {rec.parts}")
        elif rec.kind == "swap":
            stats.swaps += 1
    return stats


def check_trace(dag, trace, initial_bins=None):
    """List every ordering or residency violation found in ``trace``.

    Residency is replayed from the swap records alone: for a kernel on bins
    (ka, kb), the last swap into each bin that started before the kernel must
    have finished before it and loaded the right part, and no swap into
    either bin may start while the kernel runs.
    """
    by_tid = {r.tid: r for r in trace}
    bad = []
    if len(by_tid) != len(dag.tasks):
        bad.append(f"{len(dag.tasks) - len(by_tid)} tasks never ran")
    for task in dag.tasks:
        rec = by_tid.get(task.tid)
        if rec is None:
            continue
        for d in task.deps:
            drec = by_tid.get(d)
            if drec is None or drec.end > rec.start:
                bad.append(f"task {task.tid} started before dependency {d} finished")

    initial = list(initial_bins) if initial_bins is not None else [None] * len(dag.final_bins)
    swaps = {}
    for r in trace:
        if r.kind == "swap":
            swaps.setdefault(r.bins[0], []).append(r)
    for lst in swaps.values():
        lst.sort(key=lambda r: r.start)
    for r in trace:
        if r.kind != "kernel":
            continue
        for k, part in zip(r.bins, r.parts):
            before = [s for s in swaps.get(k, []) if s.start < r.start]
            if before:
                last = before[-1]
                if last.end > r.start or last.parts[0] != part:
                    bad.append(f"kernel {r.tid}: bin {k} not holding part {part} at start")
            elif initial[k] != part:
                bad.append(f"kernel {r.tid}: bin {k} never loaded part {part}")
            if any(r.start < s.start < r.end for s in swaps.get(k, [])):
                bad.append(f"kernel {r.tid}: bin {k} swapped during execution")
        if not r.resident_ok:
            bad.append(f"kernel {r.tid} reported a residency change")
    return bad


def write_trace(trace, path, round_idx=0, meta=None):
    """Append one JSON line per task; ``meta`` entries are copied into every line."""
    with open(path, "a") as fh:
        for r in trace:
            fh.write(json.dumps({
                **(meta or {}), "round": round_idx, "task": r.tid, "kind": r.kind, "t": r.t,
                "start": r.start, "end": r.end, "wall_start": r.wall_start,
                "wall_end": r.wall_end, "worker": r.worker,
                "bins": list(r.bins), "parts": [int(p) for p in r.parts],
                "resident_ok": r.resident_ok, "updates": r.updates,
            }) + "\n")


def embed_partitioned(g, tcfg, plan: PartitionPlan, *, epochs=None, init=None, budget_bytes=None,
                      store_dir=None, trace_path=None, trace_meta=None, info=None, shuffle_seed=None,
                      seed=None):
    """Train ``g`` with the partitioned executor; returns the full embedding.

    ``epochs`` overrides ``tcfg.epochs``.  The run has ceil(e / B) rounds of
    the full kernel order and never applies more than e * |V| positive
    updates.  The learning rate decays linearly with epoch-equivalent
    progress, kernel by kernel (see :func:`kernel_rates`).
    """
    e = tcfg.epochs if epochs is None else epochs
    n, d = g.vertex_count, tcfg.dim
    seed = tcfg.seed if seed is None else seed
    if init is None:
        init = init_embedding(n, d, np.random.default_rng(seed))
    if init.shape != (n, d):
        raise ValueError(f"initial embedding has shape {init.shape}, expected {(n, d)}")
    walk_window = tcfg.walk.window if tcfg.sampler == "walk" else 0

    store = PartStore.from_matrix(init, plan, store_dir)
    arena = DeviceArena(plan, d, budget_bytes)
    order = kernel_order(plan.K)
    rounds = math.ceil(e / plan.B) if e > 0 else 0
    counter = BudgetCounter(e * n)
    totals = {"swaps": 0, "kernels": 0, "positives": 0}
    t0 = time.perf_counter()
    workers = max(1, tcfg.threads)
    for r in range(rounds):
        dag = build_dag(order, plan, initial_bins=arena.resident)
        producer = PoolProducer(g, plan, order, plan.B, seed, r, walk_window,
                                threads=max(1, workers - 1), ahead=plan.pool_bins + 2)
        try:
            rates = kernel_rates(tcfg.lr, r, len(order), plan.B, e)
            stats = run_round(dag, arena, producer, store, rates, tcfg.negatives,
                              seed, r, counter, workers, shuffle_seed)
        finally:
            producer.close()
        totals["swaps"] += stats.swaps
        totals["kernels"] += stats.kernels
        totals["positives"] += stats.positives
        if trace_path is not None:
            write_trace(stats.trace, trace_path, r, trace_meta)
    arena.flush(store)
    M = store.assemble()
    if info is not None:
        info.update(K=plan.K, B=plan.B, sub_bins=plan.sub_bins, pool_bins=plan.pool_bins,
                    rounds=rounds, budget_updates=e * n, arena_bytes=arena.used_bytes,
                    seconds=time.perf_counter() - t0, **totals)
    log.debug("partitioned: K=%d rounds=%d positives=%d swaps=%d", plan.K, rounds,
              totals["positives"], totals["swaps"])
    return M
