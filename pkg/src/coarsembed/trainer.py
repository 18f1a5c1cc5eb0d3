"""Multilevel embedding: update rule, level schedule and the per-level trainer."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._jit import TAG_EPOCHS, TAG_PAIRS, TAG_WALK, derive_seed
from ._kernels import train_epochs, train_pairs, train_waves, update_rows
from .coarsening import CoarseningConfig, LevelMapping, coarsen
from .sampling import WalkConfig, WalkStream

log = logging.getLogger(__name__)

SAMPLERS = ("adjacency", "walk")


@dataclass
class TrainConfig:
    dim: int = 128
    negatives: int = 3
    epochs: int = 1000
    lr: float = 0.035
    smoothing: float = 0.3
    epochs_per_sync: int = 1
    seed: int = 0
    threads: int = 1
    sampler: str = "adjacency"
    walk: WalkConfig = field(default_factory=WalkConfig)
    # >1 emulates that many update sequences in flight at once (see train_waves)
    concurrency: int = 1

    def __post_init__(self):
        if not 0 <= self.smoothing <= 1:
            raise ValueError("smoothing must lie in [0, 1]")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs_per_sync < 1:
            raise ValueError("epochs_per_sync must be >= 1")
        if self.threads < 1 or self.concurrency < 1:
            raise ValueError("threads and concurrency must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.sampler == "walk" and self.concurrency > 1:
            raise ValueError("concurrency emulation applies to the adjacency sampler only")

    def as_record(self):
        rec = asdict(self)
        rec["walk"] = asdict(self.walk)
        return rec


def update_embed(v, s, b, lr):
    """Logistic update of a (source, sample) pair; returns new copies.

    score = (b - sigmoid(v.s)) * lr from the pre-update rows, then
    v' = v + score * s and s' = s + score * v.
    """
    v = np.asarray(v)
    s = np.asarray(s)
    if v.shape != s.shape or v.ndim != 1:
        raise ValueError("rows must be 1-d and of equal length")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(s))):
        raise FloatingPointError("non-finite embedding row")
    dtype = np.result_type(v.dtype, s.dtype, np.float32)
    V = np.array(v, dtype=dtype, ndmin=2)
    S = np.array(s, dtype=dtype, ndmin=2)
    update_rows(V, 0, S, 0, float(b), float(lr))
    return V[0], S[0]


def calculate_epochs(e: int, p: float, D: int):
    """Epochs per level, index 0 finest.

    e_i = round(p*e/D + (1-p)*e*2^i/(2^D-1)); the rounding residue goes to the
    coarsest level.  Levels keep at least one epoch when e >= D and stay
    non-decreasing toward coarser levels.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    if e < 0:
        raise ValueError("e must be >= 0")
    denom = 2 ** D - 1
    sched = [int(math.floor(p * e / D + (1 - p) * e * 2 ** i / denom + 0.5)) for i in range(D)]
    sched[-1] += e - sum(sched)
    if e >= D:
        while min(sched) < 1:
            lo = sched.index(min(sched))
            hi = D - 1 - sched[::-1].index(max(sched))
            sched[lo] += 1
            sched[hi] -= 1
    changed = True
    while changed:
        changed = False
        for i in range(D - 1):
            if sched[i] > sched[i + 1]:
                sched[i] -= 1
                sched[i + 1] += 1
                changed = True
    return sched


def lr_at(lr, j, e_i):
    return lr * max(1.0 - j / e_i, 1e-4)


def init_embedding(n, d, rng):
    """Uniform in [-0.5/d, 0.5/d]."""
    return rng.uniform(-0.5 / d, 0.5 / d, size=(n, d)).astype(np.float32)


def expand_embedding(m_coarse, mapping: LevelMapping):
    """Fine row v is a copy of coarse row mapping.map[v]."""
    if m_coarse.shape[0] != mapping.coarse_count:
        raise IndexError(f"embedding has {m_coarse.shape[0]} rows, mapping expects "
                         f"{mapping.coarse_count}")
    idx = np.asarray(mapping.map)
    if len(idx) and (idx.min() < 0 or idx.max() >= m_coarse.shape[0]):
        raise IndexError("mapping points outside the coarse embedding")
    return m_coarse[idx]


def level_seed(seed, level, salt=0):
    return int(np.random.SeedSequence([seed, level, salt]).generate_state(1)[0])


def _chunks(n, parts):
    bounds = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(bounds[k]), int(bounds[k + 1])) for k in range(parts) if bounds[k] < bounds[k + 1]]


def _adjacency_tasks(n, gs, ge, threads):
    """Work items (lo, hi, ep_start, ep_stop, ep_step) for one sync group."""
    glen = ge - gs
    if threads == 1:
        return [(0, n, gs, ge, 1)]
    if glen >= threads:
        # several epochs in flight at once, each worker strides over them
        return [(0, n, gs + w, ge, threads) for w in range(threads)]
    per = max(1, threads // glen)
    return [(lo, hi, ep, ep + 1, 1) for ep in range(gs, ge) for lo, hi in _chunks(n, per)]


def train_level(g, M, cfg: TrainConfig, e_i: int, *, level=0, pool=None):
    """Run ``e_i`` epochs on one level, in place; returns ``M``.

    Adjacency sampling gives every non-isolated source one positive and
    ``cfg.negatives`` negatives per epoch.  Workers split sources within an
    epoch; a barrier closes every group of ``cfg.epochs_per_sync`` epochs.
    Walk sampling consumes |E| walk pairs per epoch.
    """
    n = g.vertex_count
    if M.shape != (n, cfg.dim):
        raise ValueError(f"embedding has shape {M.shape}, level needs {(n, cfg.dim)}")
    if e_i <= 0 or n == 0 or g.num_slots == 0:
        return M
    seed = level_seed(cfg.seed, level)
    own_pool = pool is None and cfg.threads > 1
    if own_pool:
        pool = ThreadPoolExecutor(cfg.threads)
    try:
        if cfg.sampler == "walk":
            _train_walk(g, M, cfg, e_i, seed, pool)
            return M
        seed = derive_seed(seed, TAG_EPOCHS)
        off, nbrs = g.offsets, g.neighbors
        step = cfg.epochs_per_sync
        for gs in range(0, e_i, step):
            ge = min(gs + step, e_i)
            if cfg.concurrency > 1:
                train_waves(M, off, nbrs, gs, ge, e_i, cfg.lr, cfg.negatives, seed, cfg.concurrency)
                continue
            tasks = _adjacency_tasks(n, gs, ge, cfg.threads)
            if pool is None or len(tasks) == 1:
                for lo, hi, a, b, s in tasks:
                    train_epochs(M, off, nbrs, lo, hi, a, b, s, e_i, cfg.lr, cfg.negatives, seed)
            else:
                futs = [pool.submit(train_epochs, M, off, nbrs, lo, hi, a, b, s, e_i, cfg.lr,
                                    cfg.negatives, seed) for lo, hi, a, b, s in tasks]
                for f in futs:
                    f.result()
    finally:
        if own_pool:
            pool.shutdown()
    return M


def _train_walk(g, M, cfg, e_i, base_seed, pool):
    batch = g.num_edges
    step = cfg.epochs_per_sync
    seed = derive_seed(base_seed, TAG_PAIRS)
    with WalkStream(g, cfg.walk, batch, derive_seed(base_seed, TAG_WALK)) as stream:
        for gs in range(0, e_i, step):
            ge = min(gs + step, e_i)
            batches = [(j, stream.next_batch()) for j in range(gs, ge)]
            if pool is None or cfg.threads == 1:
                for j, (src, dst) in batches:
                    train_pairs(M, src, dst, 0, len(src), lr_at(cfg.lr, j, e_i), cfg.negatives,
                                seed, j)
                continue

            def run(lo_frac, hi_frac):
                for j, (src, dst) in batches:
                    lo, hi = int(len(src) * lo_frac), int(len(src) * hi_frac)
                    train_pairs(M, src, dst, lo, hi, lr_at(cfg.lr, j, e_i), cfg.negatives, seed, j)

            cuts = np.linspace(0.0, 1.0, cfg.threads + 1)
            futs = [pool.submit(run, cuts[w], cuts[w + 1]) for w in range(cfg.threads)]
            for f in futs:
                f.result()


def level_footprint(g, d):
    """Bytes for a level's CSR plus its float32 embedding."""
    return g.nbytes() + g.vertex_count * d * 4


def embed_multilevel(g, ccfg: CoarseningConfig, tcfg: TrainConfig, *, memory_budget=None,
                     partition_cfg=None, store_dir=None, trace_path=None, info=None):
    """Coarsen, train from the coarsest level down to ``g`` itself, return M_0.

    A level whose graph plus embedding exceeds ``memory_budget`` bytes is
    trained by the partitioned executor.
    """
    t0 = time.perf_counter()
    hier = coarsen(g, ccfg)
    t_coarse = time.perf_counter() - t0
    D = hier.depth
    sched = calculate_epochs(tcfg.epochs, tcfg.smoothing, D)
    rng = np.random.default_rng(level_seed(tcfg.seed, D, salt=1))
    M = init_embedding(hier.levels[-1].vertex_count, tcfg.dim, rng)
    level_info = []
    pool = ThreadPoolExecutor(tcfg.threads) if tcfg.threads > 1 else None
    try:
        for i in range(D - 1, -1, -1):
            gi = hier.levels[i]
            t1 = time.perf_counter()
            rec = {"level": i, "vertices": gi.vertex_count, "edges": gi.num_edges,
                   "epochs": sched[i], "path": "memory"}
            if memory_budget is not None and level_footprint(gi, tcfg.dim) > memory_budget:
                from .executor import embed_partitioned
                from .partition import PartitionConfig, make_partition
                pcfg = partition_cfg or PartitionConfig(seed=level_seed(tcfg.seed, i, salt=2))
                plan = make_partition(gi, memory_budget, tcfg.dim, pcfg)
                pinfo = {}
                M = embed_partitioned(gi, tcfg, plan, epochs=sched[i], init=M,
                                      budget_bytes=memory_budget, store_dir=store_dir,
                                      trace_path=trace_path, trace_meta={"level": i}, info=pinfo,
                                      seed=level_seed(tcfg.seed, i))
                rec.update(path="partitioned", **pinfo)
            else:
                train_level(gi, M, tcfg, sched[i], level=i, pool=pool)
            if not np.all(np.isfinite(M)):
                raise FloatingPointError(f"non-finite embedding after level {i}")
            rec["seconds"] = time.perf_counter() - t1
            level_info.append(rec)
            if i > 0:
                M = expand_embedding(M, hier.mappings[i - 1])
    finally:
        if pool is not None:
            pool.shutdown()
    if info is not None:
        info.update(depth=D, schedule=sched, coarsen_seconds=t_coarse,
                    level_sizes=[lv.vertex_count for lv in hier.levels],
                    level_edges=[lv.num_edges for lv in hier.levels],
                    levels=level_info, seconds=time.perf_counter() - t0)
    return M
