"""Multilevel edge-collapse coarsening.

Vertices are visited in order; an unmarked vertex opens a cluster and pulls
its unmarked neighbors in.  With the hub guard, two vertices whose degrees
both exceed the graph density never merge across their shared edge.  The
parallel variant guards the mapping array with per-entry try-locks, labels
clusters by their hub vertex and builds the coarse adjacency in per-worker
buffers.
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._jit import atomic_cas, atomic_fetch_add, jit
from .graph import Graph, density

log = logging.getLogger(__name__)


class Heuristics(str, Enum):
    NAIVE = "naive"
    ORDERING = "ordering"
    HUB2 = "ordering+hub2"


@dataclass
class CoarseningConfig:
    threshold: int = 100
    shrink_limit: float = 0.80
    heuristics: Heuristics = Heuristics.HUB2
    thread_count: int = 1
    max_levels: int | None = None
    batch_size: int = 64

    def __post_init__(self):
        self.heuristics = Heuristics(self.heuristics)
        if not 0 < self.shrink_limit < 1:
            raise ValueError("shrink_limit must lie in (0, 1)")
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")
        if self.max_levels is not None and self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")


@dataclass
class LevelMapping:
    """Fine vertex -> coarse vertex; coarse ids are contiguous."""

    map: np.ndarray
    coarse_count: int

    def validate(self):
        assert self.map.min(initial=0) >= 0
        assert self.map.max(initial=-1) < self.coarse_count
        assert len(np.unique(self.map)) == self.coarse_count


@dataclass
class CoarseningResult:
    levels: list
    mappings: list
    seconds: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.levels)


@jit
def _counting_order(degrees):
    """Vertices by degree descending, ties by ascending id (stable counting sort)."""
    n = len(degrees)
    top = 0
    for v in range(n):
        if degrees[v] > top:
            top = degrees[v]
    count = np.zeros(top + 2, np.int64)
    for v in range(n):
        count[top - degrees[v] + 1] += 1
    for k in range(1, top + 2):
        count[k] += count[k - 1]
    order = np.empty(n, np.int64)
    for v in range(n):
        b = top - degrees[v]
        order[count[b]] = v
        count[b] += 1
    return order


def order_vertices(g: Graph) -> np.ndarray:
    return _counting_order(g.degrees())


def _visit_order(g, heuristics):
    if heuristics == Heuristics.NAIVE:
        return np.arange(g.vertex_count, dtype=np.int64)
    return order_vertices(g)


@jit
def _map_sequential(offsets, nbrs, order, hub2, delta):
    n = len(offsets) - 1
    mapping = np.full(n, -1, np.int64)
    cluster = 0
    for k in range(n):
        v = order[k]
        if mapping[v] != -1:
            continue
        mapping[v] = cluster
        cluster += 1
        dv = offsets[v + 1] - offsets[v]
        for idx in range(offsets[v], offsets[v + 1]):
            u = nbrs[idx]
            if hub2 and dv > delta and offsets[u + 1] - offsets[u] > delta:
                continue
            if mapping[u] == -1:
                mapping[u] = mapping[v]
    return mapping, cluster


@jit
def _cluster_members(mapping, nc):
    start = np.zeros(nc + 1, np.int64)
    for v in range(len(mapping)):
        start[mapping[v] + 1] += 1
    for c in range(nc):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    members = np.empty(len(mapping), np.int64)
    for v in range(len(mapping)):
        c = mapping[v]
        members[fill[c]] = v
        fill[c] += 1
    return start, members


@jit
def _gather_cluster(c, start, members, offsets, nbrs, mapping, stamp, out, pos):
    """Append the sorted, deduplicated coarse neighbors of cluster c at out[pos:]."""
    begin = pos
    for k in range(start[c], start[c + 1]):
        v = members[k]
        for idx in range(offsets[v], offsets[v + 1]):
            x = mapping[nbrs[idx]]
            if x != c and stamp[x] != c + 1:
                stamp[x] = c + 1
                out[pos] = x
                pos += 1
    out[begin:pos].sort()
    return pos


@jit
def _build_coarse(offsets, nbrs, mapping, nc):
    start, members = _cluster_members(mapping, nc)
    stamp = np.zeros(nc, np.int64)
    out = np.empty(len(nbrs), np.int32)
    coff = np.zeros(nc + 1, np.int64)
    pos = 0
    for c in range(nc):
        pos = _gather_cluster(c, start, members, offsets, nbrs, mapping, stamp, out, pos)
        coff[c + 1] = pos
    return coff, out[:pos].copy()


def collapse_level(g: Graph, cfg: CoarseningConfig, order=None):
    """One sequential coarsening pass; returns (LevelMapping, coarse Graph)."""
    if g.vertex_count == 0:
        raise ValueError("cannot coarsen an empty graph")
    if order is None:
        order = _visit_order(g, cfg.heuristics)
    hub2 = cfg.heuristics == Heuristics.HUB2
    mapping, nc = _map_sequential(g.offsets, g.neighbors, order, hub2, density(g))
    coff, cn = _build_coarse(g.offsets, g.neighbors, mapping, nc)
    return LevelMapping(mapping, int(nc)), Graph(coff, cn, g.directed)


# -- parallel variant ---------------------------------------------------------


@jit
def _map_worker(offsets, nbrs, order, hub2, delta, mapping, locks, cursor, batch):
    n = len(order)
    skipped = 0
    while True:
        first = atomic_fetch_add(cursor, 0, batch)
        if first >= n:
            break
        last = min(first + batch, n)
        for k in range(first, last):
            v = order[k]
            if mapping[v] != -1:
                continue
            if not atomic_cas(locks, v, 0, 1):
                skipped += 1
                continue
            if mapping[v] != -1:
                atomic_cas(locks, v, 1, 0)
                continue
            mapping[v] = v
            dv = offsets[v + 1] - offsets[v]
            for idx in range(offsets[v], offsets[v + 1]):
                u = nbrs[idx]
                if hub2 and dv > delta and offsets[u + 1] - offsets[u] > delta:
                    continue
                if mapping[u] != -1:
                    continue
                if not atomic_cas(locks, u, 0, 1):
                    skipped += 1
                    continue
                if mapping[u] == -1:
                    mapping[u] = v
                atomic_cas(locks, u, 1, 0)
            atomic_cas(locks, v, 1, 0)
    return skipped


@jit
def _relabel(mapping, order):
    """Turn hub-id labels into contiguous ids in cluster-opening order."""
    n = len(mapping)
    for v in range(n):
        if mapping[v] == -1:
            mapping[v] = v
    newid = np.full(n, -1, np.int64)
    nc = 0
    for k in range(n):
        v = order[k]
        if mapping[v] == v:
            newid[v] = nc
            nc += 1
    for v in range(n):
        mapping[v] = newid[mapping[v]]
    return nc


@jit
def _coarse_worker(start, members, offsets, nbrs, mapping, nc, cursor, batch):
    """Build edge lists for dynamically claimed clusters in a private buffer."""
    stamp = np.zeros(nc, np.int64)
    cap = 1024
    buf = np.empty(cap, np.int32)
    done = np.empty(16, np.int64)
    lens = np.empty(16, np.int64)
    count = 0
    pos = 0
    while True:
        first = atomic_fetch_add(cursor, 0, batch)
        if first >= nc:
            break
        for c in range(first, min(first + batch, nc)):
            need = 0
            for k in range(start[c], start[c + 1]):
                v = members[k]
                need += offsets[v + 1] - offsets[v]
            if pos + need > cap:
                while pos + need > cap:
                    cap *= 2
                grown = np.empty(cap, np.int32)
                grown[:pos] = buf[:pos]
                buf = grown
            end = _gather_cluster(c, start, members, offsets, nbrs, mapping, stamp, buf, pos)
            if count == len(done):
                done2 = np.empty(2 * count, np.int64)
                lens2 = np.empty(2 * count, np.int64)
                done2[:count] = done
                lens2[:count] = lens
                done, lens = done2, lens2
            done[count] = c
            lens[count] = end - pos
            count += 1
            pos = end
    return done[:count].copy(), lens[:count].copy(), buf[:pos].copy()


@jit
def _scatter_private(done, lens, buf, coff, out):
    pos = 0
    for k in range(len(done)):
        c = done[k]
        out[coff[c]:coff[c] + lens[k]] = buf[pos:pos + lens[k]]
        pos += lens[k]


def collapse_level_parallel(g: Graph, cfg: CoarseningConfig, order=None, pool=None):
    """Coarsening pass run by ``cfg.thread_count`` workers.

    Workers claim small batches of the visit order.  A candidate whose lock
    cannot be taken is skipped for this pass; vertices left unmarked become
    singleton clusters.  Returns (LevelMapping, coarse Graph).
    """
    if g.vertex_count == 0:
        raise ValueError("cannot coarsen an empty graph")
    n = g.vertex_count
    if order is None:
        order = _visit_order(g, cfg.heuristics)
    hub2 = cfg.heuristics == Heuristics.HUB2
    delta = density(g)
    workers = cfg.thread_count
    batch = cfg.batch_size

    mapping = np.full(n, -1, np.int64)
    locks = np.zeros(n, np.int32)
    cursor = np.zeros(1, np.int64)

    own_pool = pool is None
    if own_pool:
        pool = ThreadPoolExecutor(max_workers=workers)
    try:
        futs = [pool.submit(_map_worker, g.offsets, g.neighbors, order, hub2, delta,
                            mapping, locks, cursor, batch) for _ in range(workers)]
        skipped = sum(f.result() for f in futs)
        nc = int(_relabel(mapping, order))

        start, members = _cluster_members(mapping, nc)
        cursor[0] = 0
        futs = [pool.submit(_coarse_worker, start, members, g.offsets, g.neighbors,
                            mapping, nc, cursor, batch) for _ in range(workers)]
        parts = [f.result() for f in futs]
        degree = np.zeros(nc, np.int64)
        for done, lens, _ in parts:
            degree[done] = lens
        coff = np.zeros(nc + 1, np.int64)
        np.cumsum(degree, out=coff[1:])
        out = np.empty(coff[-1], np.int32)
        futs = [pool.submit(_scatter_private, done, lens, buf, coff, out)
                for done, lens, buf in parts]
        for f in futs:
            f.result()
    finally:
        if own_pool:
            pool.shutdown()
    if skipped:
        log.debug("parallel coarsening skipped %d lock-contended candidates", skipped)
    return LevelMapping(mapping, nc), Graph(coff, out, g.directed)


def coarsen(g: Graph, cfg: CoarseningConfig) -> CoarseningResult:
    """Build the hierarchy G_0 ... G_{D-1}.

    Coarsening continues while the current level has more than
    ``cfg.threshold`` vertices.  A level that shrinks by less than the shrink
    limit is kept but ends the loop; a pass that does not shrink at all is
    discarded.
    """
    levels, mappings, seconds = [g], [], [0.0]
    pool = ThreadPoolExecutor(cfg.thread_count) if cfg.thread_count > 1 else None
    try:
        cur = g
        while cur.vertex_count > cfg.threshold:
            if cfg.max_levels is not None and len(levels) >= cfg.max_levels:
                break
            t0 = time.perf_counter()
            if pool is not None:
                mapping, coarse = collapse_level_parallel(cur, cfg, pool=pool)
            else:
                mapping, coarse = collapse_level(cur, cfg)
            elapsed = time.perf_counter() - t0
            if coarse.vertex_count >= cur.vertex_count:
                break
            levels.append(coarse)
            mappings.append(mapping)
            seconds.append(elapsed)
            log.debug("level %d: |V|=%d |E|=%d (%.3fs)", len(levels) - 1,
                      coarse.vertex_count, coarse.num_slots, elapsed)
            if coarse.vertex_count > cfg.shrink_limit * cur.vertex_count:
                break
            cur = coarse
    finally:
        if pool is not None:
            pool.shutdown()
    return CoarseningResult(levels, mappings, seconds)


def dump_hierarchy(result: CoarseningResult, directory):
    """Write ``levels.txt`` (``level i |V| |E|`` lines) and ``map_<i>.u32`` files."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "levels.txt"), "w") as fh:
        for i, level in enumerate(result.levels):
            fh.write(f"level {i} {level.vertex_count} {level.num_slots}\n")
    for i, mapping in enumerate(result.mappings):
        with open(os.path.join(directory, f"map_{i}.u32"), "wb") as fh:
            fh.write(mapping.map.astype("<u4").tobytes())


def load_mapping(path, coarse_count=None):
    with open(path, "rb") as fh:
        arr = np.frombuffer(fh.read(), dtype="<u4").astype(np.int64)
    return LevelMapping(arr, int(coarse_count if coarse_count is not None else arr.max() + 1))


__all__ = [
    "CoarseningConfig", "CoarseningResult", "Heuristics", "LevelMapping", "coarsen",
    "collapse_level", "collapse_level_parallel", "dump_hierarchy", "load_mapping",
    "order_vertices",
]
