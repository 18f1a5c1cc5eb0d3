"""Synthetic graphs for tests, benchmarks and desk-scale experiments."""

import numpy as np

from .graph import Graph


def path(n):
    v = np.arange(n - 1)
    return Graph.from_edges(n, v, v + 1)


def ring(n):
    v = np.arange(n)
    return Graph.from_edges(n, v, (v + 1) % n)


def star(leaves):
    """K_{1,leaves} with the hub at id 0."""
    return Graph.from_edges(leaves + 1, np.zeros(leaves, np.int64), np.arange(1, leaves + 1))


def complete(n):
    u, v = np.triu_indices(n, 1)
    return Graph.from_edges(n, u, v)


def complete_bipartite(a, b):
    u, v = np.meshgrid(np.arange(a), np.arange(a, a + b), indexing="ij")
    return Graph.from_edges(a + b, u.ravel(), v.ravel())


def double_star(leaves):
    """Two K_{1,leaves} stars whose hubs (ids 0 and 1) are adjacent."""
    u = [0]
    v = [1]
    nxt = 2
    for hub in (0, 1):
        for _ in range(leaves):
            u.append(hub)
            v.append(nxt)
            nxt += 1
    return Graph.from_edges(nxt, u, v)


def star_tree(depth, fanout=3):
    """Stars of stars: each internal vertex is a hub over ``fanout`` children."""
    u, v = [], []
    frontier = [0]
    nxt = 1
    for _ in range(depth):
        new = []
        for hub in frontier:
            for _ in range(fanout):
                u.append(hub)
                v.append(nxt)
                new.append(nxt)
                nxt += 1
        frontier = new
    return Graph.from_edges(nxt, u, v)


def erdos_renyi(n, avg_degree, seed=0):
    rng = np.random.default_rng(seed)
    m = int(n * avg_degree / 2)
    return Graph.from_edges(n, rng.integers(0, n, m), rng.integers(0, n, m))


def planted_partition(n, blocks, avg_degree, mixing=0.1, seed=0):
    """Stochastic block model with equal blocks.

    Each edge picks a uniform endpoint ``u``; with probability ``1 - mixing``
    the other endpoint lies in ``u``'s block, otherwise anywhere.  Returns the
    graph and the block label of every vertex.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % blocks
    rng.shuffle(labels)
    members = [np.flatnonzero(labels == b) for b in range(blocks)]
    m = int(n * avg_degree / 2)
    u = rng.integers(0, n, m)
    inside = rng.random(m) >= mixing
    v = rng.integers(0, n, m)
    for b in range(blocks):
        sel = inside & (labels[u] == b)
        v[sel] = members[b][rng.integers(0, len(members[b]), sel.sum())]
    return Graph.from_edges(n, u, v), labels


def community_graph(n, num_edges, communities, exponent=2.5, mixing=0.15,
                    max_degree=None, seed=0):
    """Heavy-tailed degrees with community structure (a light LFR variant).

    Vertex weights follow a power law with the given exponent; edges pair
    weight-proportional endpoints, mostly inside a community.  Community sizes
    are themselves heavy tailed.  Returns the graph and community labels.
    """
    rng = np.random.default_rng(seed)
    max_degree = max_degree or max(int(np.sqrt(n) * 2), 10)
    w = (1 - rng.random(n)) ** (-1.0 / (exponent - 1.0))
    w = np.minimum(w, max_degree)
    sizes = (1 - rng.random(communities)) ** (-1.0 / 1.5)
    comm = rng.choice(communities, size=n, p=sizes / sizes.sum())
    order = np.argsort(comm, kind="stable")
    starts = np.searchsorted(comm[order], np.arange(communities + 1))
    cw = np.cumsum(w[order])

    p = w / w.sum()
    m = int(num_edges * 1.08)  # head room for collisions
    u = rng.choice(n, size=m, p=p)
    v = rng.choice(n, size=m, p=p)
    inside = rng.random(m) >= mixing
    c = comm[u[inside]]
    lo, hi = starts[c], starts[c + 1]
    base = np.where(lo > 0, cw[np.maximum(lo - 1, 0)], 0.0)
    top = cw[hi - 1]
    r = base + rng.random(len(c)) * (top - base)
    idx = np.clip(np.searchsorted(cw, r, side="right"), lo, hi - 1)
    v[inside] = order[idx]
    g = Graph.from_edges(n, u, v)
    if g.num_edges > num_edges:
        edges = g.edge_array()
        keep = rng.choice(len(edges), num_edges, replace=False)
        g = Graph.from_edges(n, edges[keep, 0], edges[keep, 1])
    return g, comm
