import io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarsembed import generators as gen
from coarsembed.evaluation import (EvalError, LogRegConfig, Timer, auc_roc, classifier_negatives,
                                   emit_record, eval_link_prediction, eval_node_classification,
                                   hadamard_features, metrics_record, read_labels, score_pairs,
                                   train_logreg, train_logreg_pairs)
from coarsembed.graph import split_link_pred


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    tot = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return tot / (len(pos) * len(neg))


def test_hadamard_examples():
    m = np.array([[2.0, 3.0], [0.0, 0.0], [1.0, -2.0], [3.0, 4.0]])
    assert hadamard_features(m, 0, 0).tolist() == [4, 9]
    assert hadamard_features(m, 0, 1).tolist() == [0, 0]
    assert hadamard_features(m, 2, 3).tolist() == [3, -8]
    assert hadamard_features(m, np.array([0, 2]), np.array([0, 3])).tolist() == [[4, 9], [3, -8]]


def test_auc_examples():
    assert auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert auc_roc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert auc_roc([5, 5, 5, 5], [0, 1, 0, 1]) == 0.5
    with pytest.raises(EvalError):
        auc_roc([1, 2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=60))
def test_auc_matches_brute_force(rows):
    scores = [r[0] for r in rows]
    labels = [r[1] for r in rows]
    if all(labels) or not any(labels):
        return
    assert auc_roc(scores, labels) == pytest.approx(brute_auc(scores, labels))


def test_auc_brute_force_large():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 50, 1000).astype(float)
    l = rng.random(1000) < 0.4
    assert auc_roc(s, l) == pytest.approx(brute_auc(s.tolist(), l.tolist()))


def test_logreg_separable_two_points():
    model = train_logreg(np.array([[-1.0], [1.0]]), np.array([0, 1]), LogRegConfig(epochs=50, lr=0.5))
    pred = model.predict_proba(np.array([[-1.0], [1.0]])) > 0.5
    assert pred.tolist() == [False, True]


def test_logreg_sign():
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    model = train_logreg(x, (x > 0).astype(float))
    assert model.weights[0] > 0


def test_logreg_single_class():
    with pytest.raises(EvalError):
        train_logreg(np.ones((3, 2)), np.ones(3))


def test_logreg_independent_labels_auc_half():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(4000, 8))
    y = rng.random(4000) < 0.5
    model = train_logreg(X[:2000], y[:2000].astype(float))
    assert abs(auc_roc(model.decision_function(X[2000:]), y[2000:]) - 0.5) < 0.05


def test_logreg_deterministic():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 4))
    y = (X[:, 0] + rng.normal(size=300) > 0).astype(float)
    a = train_logreg(X, y, LogRegConfig(seed=4))
    b = train_logreg(X, y, LogRegConfig(seed=4))
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


def test_pair_features_match_explicit():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(50, 6))
    pairs = rng.integers(0, 50, (400, 2))
    y = rng.random(400) < 0.5
    cfg = LogRegConfig(seed=1)
    a = train_logreg_pairs(m, pairs, y.astype(float), cfg)
    b = train_logreg(hadamard_features(m, pairs[:, 0], pairs[:, 1]), y.astype(float), cfg)
    assert np.allclose(a.weights, b.weights) and a.bias == pytest.approx(b.bias)
    assert np.allclose(score_pairs(a, m, pairs),
                       b.decision_function(hadamard_features(m, pairs[:, 0], pairs[:, 1])))


def _one_hot_split(blocks, seed):
    g, labels = gen.planted_partition(1200, blocks, 10, mixing=0.05, seed=seed)
    sp = split_link_pred(g, 0.2, seed + 1)
    lab = labels[sp.train_vertices]
    return sp, lab, np.eye(blocks)[lab]


def test_link_prediction_planted_one_hot_ceiling():
    # one-hot rows only tell which block both endpoints share (if any); the
    # classifier must do at least as well as the same-block indicator
    sp, lab, m = _one_hot_split(2, 0)
    test = np.concatenate([sp.test_pos, sp.test_neg])
    y = np.r_[np.ones(len(sp.test_pos)), np.zeros(len(sp.test_neg))]
    ceiling = auc_roc((lab[test[:, 0]] == lab[test[:, 1]]).astype(float), y)
    auc = eval_link_prediction(m, sp, seed=3)
    assert ceiling - 0.01 <= auc <= ceiling + 0.02


def test_link_prediction_planted_one_hot_many_blocks():
    sp, _, m = _one_hot_split(20, 1)
    assert eval_link_prediction(m, sp, seed=3) > 0.9


def test_link_prediction_random_embedding():
    g = gen.erdos_renyi(2000, 10, seed=1)
    sp = split_link_pred(g, 0.2, 2)
    m = np.random.default_rng(0).normal(size=(sp.train.vertex_count, 16))
    assert abs(eval_link_prediction(m, sp, seed=1) - 0.5) < 0.05


def test_link_prediction_shape_mismatch():
    g = gen.erdos_renyi(100, 6, seed=1)
    sp = split_link_pred(g, 0.2, 2)
    with pytest.raises(EvalError):
        eval_link_prediction(np.zeros((3, 2)), sp)


def test_classifier_negatives_dense_fallback():
    rng = np.random.default_rng(0)
    n = 5
    g = gen.complete(n)
    keys = np.sort(g.edge_array()[:, 0] * n + g.edge_array()[:, 1])
    with pytest.warns(RuntimeWarning):
        neg = classifier_negatives(n, 20, keys, np.empty(0, np.int64), rng)
    assert len(neg) == 20
    sparse = gen.path(50)
    k2 = np.sort(sparse.edge_array()[:, 0] * 50 + sparse.edge_array()[:, 1])
    neg = classifier_negatives(50, 30, k2, np.empty(0, np.int64), rng)
    got = set((neg[:, 0] * 50 + neg[:, 1]).tolist())
    assert not got & set(k2.tolist()) and len(got) == 30


def test_node_classification_separable():
    rng = np.random.default_rng(0)
    n = 400
    lab = rng.integers(0, 4, n)
    m = np.eye(4)[lab] * 5 + rng.normal(scale=0.01, size=(n, 4))
    labels = {v: {int(lab[v])} for v in range(n)}
    micro, macro = eval_node_classification(m, labels, 0.5, seed=1)
    assert micro == pytest.approx(1.0) and macro == pytest.approx(1.0)


def test_node_classification_random_labels():
    rng = np.random.default_rng(1)
    n = 4000
    m = rng.normal(size=(n, 8))
    labels = {v: {int(rng.integers(2))} for v in range(n)}
    micro, macro = eval_node_classification(m, labels, 0.1, seed=2)
    assert abs(micro - 0.5) < 0.07
    assert 0 <= macro <= 1


def test_node_classification_multilabel_topk_and_truncation():
    rng = np.random.default_rng(2)
    n = 300
    m = rng.normal(size=(n, 6))
    labels = {v: {0, 1 + v % 3} for v in range(n)}
    labels[0] = {99}   # rare label, dropped by top_labels=4 truncation
    micro, macro = eval_node_classification(m, labels, 0.3, top_labels=4, seed=0, threads=2)
    assert 0 <= micro <= 1 and 0 <= macro <= 1


def test_node_classification_untrainable_label_warns():
    rng = np.random.default_rng(3)
    n = 200
    m = rng.normal(size=(n, 4))
    labels = {v: {v % 2} for v in range(n)}
    labels[5] = {0, 7}   # label 7 occurs once; almost surely absent from the 10% train split
    with pytest.warns(RuntimeWarning, match="excluded"):
        eval_node_classification(m, labels, 0.1, seed=4)


def test_node_classification_deterministic():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(300, 4))
    labels = {v: {int(rng.integers(3))} for v in range(300)}
    a = eval_node_classification(m, labels, 0.2, seed=9)
    b = eval_node_classification(m, labels, 0.2, seed=9)
    assert a == b


def test_read_labels(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("# v labels\n10 1 2\n20 3\n10 4\n99 1\n")
    assert read_labels(p) == {10: {1, 2, 4}, 20: {3}, 99: {1}}
    assert read_labels(p, ids=np.array([10, 20])) == {0: {1, 2, 4}, 1: {3}}


def test_metrics_record_shape():
    with Timer() as t:
        pass
    rec = metrics_record("lp", "g.txt", "normal", 3, t.seconds, auc=0.9)
    buf = io.StringIO()
    emit_record(rec, buf)
    back = json.loads(buf.getvalue())
    assert list(back) == ["task", "graph", "preset", "seed", "auc", "wall_seconds"]
