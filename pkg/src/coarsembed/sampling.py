"""Positive and negative sampling, random-walk pairs and partition sample pools."""

import queue
import threading
from dataclasses import dataclass

import numpy as np

from ._kernels import fill_pool_kernel, walk_pairs_kernel


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class WalkConfig:
    """Random-walk sampler knobs: walk length, window, walks per start vertex."""

    walk_length: int = 40
    window: int = 5
    walks_per_vertex: int = 1
    shuffle: bool = True

    def __post_init__(self):
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if not 1 <= self.window < self.walk_length:
            raise ValueError("window must satisfy 1 <= window < walk_length")
        if self.walks_per_vertex < 1:
            raise ValueError("walks_per_vertex must be >= 1")

    def pairs_per_walk(self) -> int:
        g, l = self.window, self.walk_length
        return g * l - g * (g + 1) // 2


def positive_adjacency(g, src: int, rng) -> int:
    deg = g.degree(src)
    if deg == 0:
        raise SamplingError(f"vertex {src} has no neighbors")
    return int(g.neighbors[g.offsets[src] + rng.integers(deg)])


def negative_uniform(vertex_count: int, rng) -> int:
    """Uniform over all vertices; true neighbors and the source are not excluded."""
    if vertex_count < 1:
        raise ValueError("vertex_count must be >= 1")
    return int(rng.integers(vertex_count))


def walk_pairs(g, cfg: WalkConfig, seed: int, stream: int = 0, starts=None):
    """Pairs (w_a, w_b), 0 < b - a <= window, from uniform walks.

    Walks start at every vertex ``walks_per_vertex`` times unless ``starts``
    is given.  Returns two int32 arrays; shuffled if ``cfg.shuffle``.
    """
    if starts is None:
        starts = np.tile(np.arange(g.vertex_count, dtype=np.int64), cfg.walks_per_vertex)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    cap = len(starts) * cfg.pairs_per_walk()
    src = np.empty(cap, np.int32)
    dst = np.empty(cap, np.int32)
    k = walk_pairs_kernel(g.offsets, g.neighbors, starts, cfg.walk_length, cfg.window,
                          seed, stream, src, dst)
    src, dst = src[:k], dst[:k]
    if cfg.shuffle:
        perm = np.random.default_rng([seed, stream]).permutation(k)
        src, dst = src[perm], dst[perm]
    return src, dst


class WalkStream:
    """Serves training batches of walk pairs, produced ahead on a background thread.

    Each call to :meth:`next_batch` returns exactly ``batch`` pairs.  Walk
    starts cycle through a fresh permutation of the non-isolated vertices.
    """

    def __init__(self, g, cfg: WalkConfig, batch: int, seed: int, ahead: int = 2):
        self.g = g
        self.cfg = cfg
        self.batch = int(batch)
        self.seed = seed
        self._starts_pool = np.flatnonzero(g.degrees() > 0)
        if len(self._starts_pool) == 0:
            raise SamplingError("graph has no edges to walk on")
        self._q = queue.Queue(maxsize=ahead)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, daemon=True)
        self._thread.start()

    def _produce(self):
        stream = 0
        src_buf = np.empty(0, np.int32)
        dst_buf = np.empty(0, np.int32)
        try:
            while not self._stop.is_set():
                while len(src_buf) < self.batch:
                    rng = np.random.default_rng([self.seed, stream, 1])
                    starts = np.tile(rng.permutation(self._starts_pool), self.cfg.walks_per_vertex)
                    s, d = walk_pairs(self.g, self.cfg, self.seed, stream, starts)
                    src_buf = np.concatenate([src_buf, s])
                    dst_buf = np.concatenate([dst_buf, d])
                    stream += 1
                item = (src_buf[:self.batch], dst_buf[:self.batch])
                src_buf, dst_buf = src_buf[self.batch:], dst_buf[self.batch:]
                while not self._stop.is_set():
                    try:
                        self._q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
        except BaseException as exc:  # surface producer failures to the consumer
            self._q.put(exc)

    def next_batch(self):
        item = self._q.get()
        if isinstance(item, BaseException):
            raise item
        return item

    def close(self):
        self._stop.set()
        self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class SamplePool:
    """Positive pairs for one part pair, in part-local row ids.

    The first ``n_fwd`` entries have their source in part ``i`` and their
    positive in part ``j``; the rest go the other way.
    """

    part_pair: tuple
    src: np.ndarray
    pos: np.ndarray
    n_fwd: int
    capacity: int

    def __len__(self):
        return len(self.src)

    @property
    def nbytes(self):
        return self.src.nbytes + self.pos.nbytes

    def pairs_global(self, plan):
        """(source, positive) pairs mapped back to graph vertex ids."""
        i, j = self.part_pair
        f = self.n_fwd
        pi, pj = plan.parts[i], plan.parts[j]
        src = np.concatenate([pi[self.src[:f]], pj[self.src[f:]]])
        pos = np.concatenate([pj[self.pos[:f]], pi[self.pos[f:]]])
        return np.stack([src, pos], axis=1).astype(np.int64)

    def dump(self, target, plan):
        """Debug dump: one ``src dst`` line per entry, graph vertex ids."""
        np.savetxt(target, self.pairs_global(plan), fmt="%d")


def fill_pool(g, plan, pair, B: int, seed: int, stream: int = 0, walk_window: int = 0) -> SamplePool:
    """Up to B positives per source of ``pair`` that land in the opposite part.

    Positives are neighbors (``walk_window`` 0) or endpoints of short walks of
    1..walk_window steps.  For i == j both endpoints lie in the same part.
    """
    i, j = pair
    if not (0 <= j <= i < plan.K):
        raise ValueError(f"pair {pair} does not respect the plan")
    vi, vj = plan.parts[i], plan.parts[j]
    cap = B * (len(vi) + (len(vj) if i != j else 0))
    src = np.empty(cap, np.int32)
    pos = np.empty(cap, np.int32)
    k, n_fwd = fill_pool_kernel(g.offsets, g.neighbors, plan.part_of, plan.local_id, vi, vj, i, j,
                                B, walk_window, seed, stream, src, pos)
    return SamplePool((i, j), src[:k].copy(), pos[:k].copy(), int(n_fwd), B)
