"""Downstream tasks: link prediction (AUCROC) and multi-label node classification (F1).

The classifier is a small SGD logistic regression.  Link-prediction features
are Hadamard products of endpoint rows, built inside the kernel so the
feature matrix never has to be materialised.
"""

import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._jit import jit
from ._kernels import sigmoid
from .graph import edge_keys, sample_non_edges

log = logging.getLogger(__name__)

PAIRS, ROWS = 0, 1


class EvalError(ValueError):
    pass


@dataclass
class LogRegConfig:
    epochs: int = 5
    lr: float = 0.02
    l2: float = 1e-5
    seed: int = 0


@dataclass
class LogRegModel:
    """Weights act on standardised features: (x - mean) / scale."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    learning_rate: float = 0.02
    epochs: int = 5

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        return ((X - self.mean) / self.scale) @ self.weights + self.bias

    def predict_proba(self, X):
        return 1.0 / (1.0 + np.exp(-np.clip(self.decision_function(X), -30, 30)))


def hadamard_features(m, u, v):
    """Element-wise product of rows u and v (vectorised over index arrays)."""
    return np.asarray(m)[u] * np.asarray(m)[v]


@jit
def _feature(X, U, V, i, k, mode):
    if mode == 0:
        return X[U[i], k] * X[V[i], k]
    return X[U[i], k]


@jit
def _moments(X, U, V, count, mode, mean, scale):
    d = X.shape[1]
    for i in range(count):
        for k in range(d):
            f = _feature(X, U, V, i, k, mode)
            mean[k] += f
            scale[k] += f * f
    for k in range(d):
        mean[k] /= count
        var = scale[k] / count - mean[k] * mean[k]
        scale[k] = np.sqrt(var) if var > 1e-24 else 1.0


@jit
def _sgd_epoch(X, U, V, y, order, mode, mean, scale, w, wb, lr, l2, t0, wavg, avg, averaging):
    """One pass of logistic SGD; ``wb`` holds the bias, ``avg`` the average count."""
    d = X.shape[1]
    for step in range(len(order)):
        i = order[step]
        z = wb[0]
        for k in range(d):
            z += w[k] * (_feature(X, U, V, i, k, mode) - mean[k]) / scale[k]
        grad = sigmoid(z) - y[i]
        eta = lr / (1.0 + lr * l2 * (t0 + step))
        for k in range(d):
            f = (_feature(X, U, V, i, k, mode) - mean[k]) / scale[k]
            w[k] -= eta * (grad * f + l2 * w[k])
        wb[0] -= eta * grad
        if averaging:
            avg[0] += 1.0
            c = avg[0]
            for k in range(d):
                wavg[k] += (w[k] - wavg[k]) / c
            wavg[d] += (wb[0] - wavg[d]) / c


@jit
def _scores(X, U, V, count, mode, mean, scale, w, b, out):
    d = X.shape[1]
    for i in range(count):
        z = b
        for k in range(d):
            z += w[k] * (_feature(X, U, V, i, k, mode) - mean[k]) / scale[k]
        out[i] = z


def _fit(X, U, V, y, mode, cfg: LogRegConfig):
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0 or y.min() == y.max():
        raise EvalError("logistic regression needs both classes")
    X = np.ascontiguousarray(X)
    d = X.shape[1]
    mean = np.zeros(d)
    scale = np.zeros(d)
    _moments(X, U, V, len(y), mode, mean, scale)
    w = np.zeros(d)
    wb = np.zeros(1)
    wavg = np.zeros(d + 1)
    avg = np.zeros(1)
    rng = np.random.default_rng(cfg.seed)
    t = 0
    for ep in range(cfg.epochs):
        order = rng.permutation(len(y))
        # average the iterates of the final pass
        _sgd_epoch(X, U, V, y, order, mode, mean, scale, w, wb, cfg.lr, cfg.l2, t, wavg, avg,
                   ep == cfg.epochs - 1)
        t += len(y)
    if not np.all(np.isfinite(wavg)):
        raise EvalError("logistic regression diverged")
    return LogRegModel(wavg[:d].copy(), float(wavg[d]), mean, scale, cfg.lr, cfg.epochs)


def train_logreg(X, y, cfg: LogRegConfig | None = None) -> LogRegModel:
    """Fit on explicit feature rows ``X`` with 0/1 labels ``y``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    idx = np.arange(len(X), dtype=np.int64)
    return _fit(X, idx, idx, y, ROWS, cfg or LogRegConfig())


def train_logreg_pairs(m, pairs, y, cfg: LogRegConfig | None = None) -> LogRegModel:
    """Fit on Hadamard features of vertex pairs without building the feature matrix."""
    pairs = np.asarray(pairs, dtype=np.int64)
    return _fit(np.asarray(m), np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1]),
                y, PAIRS, cfg or LogRegConfig())


def score_pairs(model: LogRegModel, m, pairs):
    pairs = np.asarray(pairs, dtype=np.int64)
    out = np.empty(len(pairs))
    _scores(np.asarray(m), np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1]),
            len(pairs), PAIRS, model.mean, model.scale, model.weights, model.bias, out)
    return out


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classifier_negatives(n, count, forbidden, exclude, rng, directed=False):
    """Negative training pairs: uniform non-edges that are not test pairs.

    On graphs too dense for rejection sampling the admissible pairs are
    enumerated and drawn with replacement when there are fewer than
    ``count``.  If no admissible pair exists at all (a complete graph), test
    pairs and then edges are admitted, so the classifier still sees two
    classes.
    """
    total = n * (n - 1) if directed else n * (n - 1) // 2
    if count <= (total - len(forbidden) - len(exclude)) // 2:
        return sample_non_edges(n, count, forbidden, rng, directed, exclude=exclude)
    u, v = np.nonzero(~np.eye(n, dtype=bool)) if directed else np.triu_indices(n, 1)
    keys = u.astype(np.int64) * n + v
    free = keys[~np.isin(keys, forbidden) & ~np.isin(keys, exclude)]
    if len(free) == 0:
        free = keys[~np.isin(keys, forbidden)]
    if len(free) == 0:
        free = keys
    if len(free) < count:
        warnings.warn("graph too dense for distinct non-edge negatives; drawing with replacement",
                      RuntimeWarning, stacklevel=2)
    pick = rng.choice(free, size=count, replace=len(free) < count)
    return np.stack([pick // n, pick % n], axis=1)


def eval_link_prediction(m, split, cfg: LogRegConfig | None = None, seed: int = 0) -> float:
    """Train on every train edge plus as many random non-edges; AUC on the test pairs."""
    cfg = cfg or LogRegConfig(seed=seed)
    train = split.train
    if m.shape[0] != train.vertex_count:
        raise EvalError(f"embedding has {m.shape[0]} rows, train graph {train.vertex_count} vertices")
    n = train.vertex_count
    pos = train.edge_array()
    rng = np.random.default_rng(seed)
    forbidden = np.sort(edge_keys(pos, n, train.directed))
    test_keys = np.sort(np.concatenate([edge_keys(split.test_pos, n, train.directed),
                                        edge_keys(split.test_neg, n, train.directed)]))
    neg = classifier_negatives(n, len(pos), forbidden, test_keys, rng, train.directed)
    pairs = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    model = train_logreg_pairs(m, pairs, y, cfg)
    test = np.concatenate([split.test_pos, split.test_neg])
    labels = np.concatenate([np.ones(len(split.test_pos)), np.zeros(len(split.test_neg))])
    return auc_roc(score_pairs(model, m, test), labels)


def read_labels(path, ids=None):
    """Label file: ``vertex label [label ...]`` per line; repeated vertices accumulate.

    ``ids`` (a graph's original-id array) maps input ids to dense rows; vertices
    missing from the graph are dropped.  Returns {row: set(labels)}.
    """
    out = {}
    lookup = None
    if ids is not None:
        lookup = {int(v): i for i, v in enumerate(ids)}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            v = int(parts[0])
            if lookup is not None:
                if v not in lookup:
                    continue
                v = lookup[v]
            out.setdefault(v, set()).update(int(x) for x in parts[1:])
    return out


def eval_node_classification(m, labels, labeled_fraction=0.1, cfg: LogRegConfig | None = None,
                             top_labels=100, seed=0, threads=1):
    """One-vs-rest logistic regression; returns (micro_f1, macro_f1).

    Only the ``top_labels`` most frequent labels are kept and only vertices
    holding one of them take part.  Each test vertex is assigned its k best
    scoring labels, k being its true label count.  A kept label with no
    positive training vertex cannot be learned: it is left out of the macro
    average and a warning is issued.
    """
    cfg = cfg or LogRegConfig(seed=seed)
    if not 0 < labeled_fraction < 1:
        raise ValueError("labeled_fraction must lie in (0, 1)")
    m = np.asarray(m, dtype=np.float64)
    counts = {}
    for ls in labels.values():
        for lab in ls:
            counts[lab] = counts.get(lab, 0) + 1
    kept = sorted(counts, key=lambda lab: (-counts[lab], lab))[:top_labels]
    col = {lab: c for c, lab in enumerate(kept)}
    verts = sorted(v for v, ls in labels.items() if any(lab in col for lab in ls))
    if not verts:
        raise EvalError("no labeled vertices")
    verts = np.array(verts, dtype=np.int64)
    if verts.max() >= len(m):
        raise EvalError("label file refers to vertices outside the embedding")
    Y = np.zeros((len(verts), len(kept)), dtype=bool)
    for r, v in enumerate(verts):
        for lab in labels[int(v)]:
            if lab in col:
                Y[r, col[lab]] = True

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(verts))
    n_train = max(1, int(round(labeled_fraction * len(verts))))
    tr, te = perm[:n_train], perm[n_train:]
    if len(te) == 0:
        raise EvalError("no test vertices left")
    X_tr, X_te = m[verts[tr]], m[verts[te]]

    def fit(c):
        y = Y[tr, c]
        if y.all() or not y.any():
            return None
        model = train_logreg(X_tr, y.astype(np.float64), LogRegConfig(cfg.epochs, cfg.lr, cfg.l2,
                                                                        cfg.seed + c))
        return model.decision_function(X_te)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            cols = list(ex.map(fit, range(len(kept))))
    else:
        cols = [fit(c) for c in range(len(kept))]
    trainable = np.array([c is not None for c in cols])
    untrainable = [kept[c] for c in range(len(kept)) if not trainable[c]]
    if untrainable:
        warnings.warn(f"{len(untrainable)} labels have a single class among labeled vertices "
                      f"and are excluded from the macro average", RuntimeWarning, stacklevel=2)
    scores = np.full((len(te), len(kept)), -np.inf)
    for c, s in enumerate(cols):
        if s is not None:
            scores[:, c] = s
    truth = Y[te]
    k = truth.sum(axis=1)
    ranked = np.argsort(-scores, axis=1, kind="stable")
    pred = np.zeros_like(truth)
    for r in range(len(te)):
        pred[r, ranked[r, :k[r]]] = True

    tp = (pred & truth).sum(axis=0).astype(np.float64)
    fp = (pred & ~truth).sum(axis=0).astype(np.float64)
    fn = (~pred & truth).sum(axis=0).astype(np.float64)
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / denom) if denom else 0.0
    per = 2 * tp + fp + fn
    use = trainable & (per > 0)
    macro = float(np.mean(2 * tp[use] / per[use])) if use.any() else 0.0
    return micro, macro


def metrics_record(task, graph, preset, seed, wall_seconds, **values):
    rec = {"task": task, "graph": graph, "preset": preset, "seed": seed}
    rec.update(values)
    rec["wall_seconds"] = round(float(wall_seconds), 6)
    return rec


def emit_record(rec, stream):
    stream.write(json.dumps(rec, sort_keys=False) + "\n")
    stream.flush()


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
