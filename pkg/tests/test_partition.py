import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarsembed import generators as gen
from coarsembed.partition import (PartitionConfig, PartitionConfigError, arena_bytes, build_dag,
                                  choose_parts, kernel_order, make_partition)


def unroll_recurrence(K):
    """Oracle: next pair is (a+1, 0) after a diagonal pair, else (a, b+1)."""
    seq = [(0, 0)]
    while len(seq) < K * (K + 1) // 2:
        a, b = seq[-1]
        seq.append((a + 1, 0) if a == b else (a, b + 1))
    return seq


def test_kernel_order_examples():
    assert kernel_order(1) == [(0, 0)]
    assert kernel_order(3) == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]
    fig = [(r, c) for r in range(6) for c in range(r + 1)]   # rows top to bottom, left to right
    assert kernel_order(6) == fig and len(fig) == 21
    with pytest.raises(ValueError):
        kernel_order(0)


def test_kernel_order_matches_recurrence():
    for K in range(1, 33):
        assert kernel_order(K) == unroll_recurrence(K)


def test_budget_arithmetic_example():
    cfg = PartitionConfig(sub_bins=3, pool_bins=2, B=5)
    K = choose_parts(1000, 32, 64 * 1024, cfg)
    fits = lambda k: 3 * math.ceil(1000 / k) * 32 * 4 + 2 * 5 * 2 * math.ceil(1000 / k) * 8 <= 65536
    assert fits(K) and not fits(K - 1)
    assert K == 9


def test_minimum_k_when_budget_large():
    cfg = PartitionConfig()
    assert choose_parts(1000, 32, 10 ** 9, cfg) == cfg.sub_bins


def test_infeasible_budget():
    with pytest.raises(PartitionConfigError):
        choose_parts(1000, 32, 100, PartitionConfig())
    with pytest.raises(PartitionConfigError):
        make_partition(gen.path(100), 10 ** 9, 8, PartitionConfig(parts=2, B=10 ** 9))
    with pytest.raises(PartitionConfigError):
        PartitionConfig(sub_bins=1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.integers(1, 40), st.integers(0, 99))
def test_part_sizes(n, K, seed):
    K = min(K, n)
    plan = make_partition(n, None, 4, PartitionConfig(parts=K, seed=seed))
    plan.validate()
    assert plan.K == K


def test_partition_seeded():
    a = make_partition(500, None, 4, PartitionConfig(parts=4, seed=1))
    b = make_partition(500, None, 4, PartitionConfig(parts=4, seed=1))
    c = make_partition(500, None, 4, PartitionConfig(parts=4, seed=2))
    assert np.array_equal(a.part_of, b.part_of)
    assert not np.array_equal(a.part_of, c.part_of)


def plan_for(K, P, S=2, n=None):
    return make_partition(n or 10 * K, None, 4, PartitionConfig(parts=K, sub_bins=P, pool_bins=S))


def test_swap_counts():
    for K, P, want in ((2, 2, 2), (3, 3, 3)):
        dag = build_dag(kernel_order(K), plan_for(K, P))
        swaps = [t for t in dag.tasks if t.kind == "swap"]
        assert len(swaps) == want
        assert sorted(t.part for t in swaps) == list(range(K))
        assert all(t.evict == -1 for t in swaps)


@pytest.mark.parametrize("P", [2, 3, 4])
def test_dag_acyclic_and_wired(P):
    for K in range(1, 13):
        plan = plan_for(K, P)
        order = kernel_order(K)
        dag = build_dag(order, plan)
        topo = dag.topological_order()
        assert len(topo) == len(dag.tasks)
        assert dag.count("kernel") == dag.count("copy") == len(order)
        # replay residency along the task ids (which follow the build order)
        bins = [None] * P
        loader = [None] * P
        for task in dag.tasks:
            if task.kind == "swap":
                assert task.part not in bins
                bins[task.bin] = task.part
                loader[task.bin] = task.tid
            elif task.kind == "kernel":
                ka, kb = task.bins
                assert bins[ka] == task.pair[0] and bins[kb] == task.pair[1]
                copy = [t for t in dag.tasks if t.kind == "copy" and t.t == task.t][0]
                assert copy.tid in task.deps
                for k in {ka, kb}:
                    if loader[k] is not None:
                        assert loader[k] in task.deps


@pytest.mark.parametrize("K,P", [(4, 2), (6, 3), (8, 3), (9, 4)])
def test_row_residency(K, P):
    dag = build_dag(kernel_order(K), plan_for(K, P))
    # part a of row a is loaded at most once while its row runs
    for a in range(K):
        loads = [t for t in dag.tasks if t.kind == "swap" and t.part == a and t.t in
                 {s for s, (x, _) in enumerate(dag.order) if x == a}]
        assert len(loads) <= 1


def test_swap_waits_for_users_of_evicted_part():
    K, P = 6, 2
    dag = build_dag(kernel_order(K), plan_for(K, P))
    kernels_in_bin = {}
    for task in dag.tasks:
        if task.kind == "swap":
            users = kernels_in_bin.get(task.bin, [])
            assert set(users) <= set(task.deps)
            kernels_in_bin[task.bin] = []
        elif task.kind == "kernel":
            for k in set(task.bins):
                kernels_in_bin.setdefault(k, []).append(task.tid)


def test_initial_bins_carry_over():
    K, P = 5, 3
    plan = plan_for(K, P)
    first = build_dag(kernel_order(K), plan)
    second = build_dag(kernel_order(K), plan, initial_bins=first.final_bins)
    assert second.count("swap") <= first.count("swap")
    with pytest.raises(ValueError):
        build_dag(kernel_order(K), plan, initial_bins=[None])


def test_arena_bytes_formula():
    assert arena_bytes(100, 4, 8, 3, 2, 5) == 3 * 25 * 8 * 4 + 2 * 5 * 2 * 25 * 8
