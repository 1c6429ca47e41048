import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from partscene.arborescence import max_arborescence, reachable
from partscene.errors import DisconnectedStructureError

from oracles import brute_force_arborescence


def random_digraph(rng, n_max=6, density=None):
    n = int(rng.integers(1, n_max + 1))
    p = rng.uniform(0.3, 1.0) if density is None else density
    nodes = list(range(n))
    weights = {(u, v): float(rng.uniform()) for u in nodes for v in nodes if u != v and rng.uniform() < p}
    return nodes, weights


def total(weights, edges):
    return math.fsum(weights[e] for e in edges)


def is_arborescence(nodes, edges, root):
    parents = {}
    for u, v in edges:
        if v in parents or v == root:
            return False
        parents[v] = u
    return len(edges) == len(nodes) - 1 and reachable(nodes, edges, root) == set(nodes)


def test_star():
    nodes = ["r", "a", "b", "c"]
    w = {("r", x): 0.9 for x in "abc"}
    edges = max_arborescence(nodes, w, "r")
    assert sorted(edges) == [("r", "a"), ("r", "b"), ("r", "c")]
    assert total(w, edges) == pytest.approx(0.9 * 3)


def test_two_cycle_between_non_root_nodes():
    nodes = [0, 1, 2]
    w = {(0, 1): 0.3, (0, 2): 0.2, (1, 2): 0.9, (2, 1): 0.8}
    edges = max_arborescence(nodes, w, 0)
    assert total(w, edges) == brute_force_arborescence(nodes, w, 0)
    assert sorted(edges) == [(0, 1), (1, 2)]


def test_leg_prefers_top_over_adjacent_leg():
    nodes = ["top", "leg_0", "leg_1"]
    w = {("top", "leg_0"): 0.9, ("top", "leg_1"): 0.9, ("leg_0", "leg_1"): 0.2, ("leg_1", "leg_0"): 0.2}
    assert sorted(max_arborescence(nodes, w, "top")) == [("top", "leg_0"), ("top", "leg_1")]


def test_unreachable_nodes_are_reported():
    with pytest.raises(DisconnectedStructureError) as exc:
        max_arborescence([0, 1, 2, 3], {(0, 1): 1.0, (2, 3): 1.0}, 0)
    assert exc.value.unreachable == ["2", "3"]


def test_single_node():
    assert max_arborescence(["a"], {}, "a") == []


@given(st.integers(0, 2 ** 32 - 1))
def test_matches_brute_force_and_networkx(seed):
    rng = np.random.default_rng(seed)
    nodes, w = random_digraph(rng)
    best = brute_force_arborescence(nodes, w, 0)
    if best is None:
        with pytest.raises(DisconnectedStructureError):
            max_arborescence(nodes, w, 0)
        return
    edges = max_arborescence(nodes, w, 0)
    assert is_arborescence(nodes, edges, 0)
    assert total(w, edges) == best
    # second route: networkx on the graph with edges into the root removed
    g = nx.DiGraph()
    g.add_nodes_from(nodes)
    g.add_weighted_edges_from((u, v, x) for (u, v), x in w.items() if v != 0)
    if len(nodes) > 1:
        ref = nx.maximum_spanning_arborescence(g)
        assert total(w, list(ref.edges)) == pytest.approx(best, abs=1e-12)


def test_tie_breaking_is_deterministic():
    nodes = [0, 1, 2]
    w = {(0, 1): 0.5, (0, 2): 0.5, (1, 2): 0.5, (2, 1): 0.5}
    assert max_arborescence(nodes, w, 0) == max_arborescence(nodes, dict(reversed(list(w.items()))), 0)
