import numpy as np
import pytest

from coarsembed import generators as gen
from coarsembed.graph import Graph


def small_corpus():
    """Small graphs shared by the structural tests."""
    out = {
        "path10": gen.path(10),
        "ring12": gen.ring(12),
        "star8": gen.star(8),
        "k6": gen.complete(6),
        "k34": gen.complete_bipartite(3, 4),
        "double_star": gen.double_star(3),
        "star_tree": gen.star_tree(3, 3),
        "er200": gen.erdos_renyi(200, 6, seed=1),
        "er500": gen.erdos_renyi(500, 4, seed=2),
        "pp400": gen.planted_partition(400, 4, 8, seed=3)[0],
        "pp1500": gen.planted_partition(1500, 10, 10, seed=4)[0],
        "comm2000": gen.community_graph(2000, 8000, 20, seed=5)[0],
    }
    # a graph with isolated vertices
    out["isolated"] = Graph.from_edges(8, np.array([0, 1, 5]), np.array([1, 2, 6]))
    return out


@pytest.fixture(scope="session")
def corpus():
    return small_corpus()


def edge_set(g):
    return {tuple(e) for e in g.edge_array().tolist()}


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
