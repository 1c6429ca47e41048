"""Maximum-weight spanning arborescence (Chu-Liu/Edmonds)."""

from __future__ import annotations

from collections import deque
from typing import Dict, Hashable, Iterable, List, Mapping, Set, Tuple

from .errors import DisconnectedStructureError

Edge = Tuple[Hashable, Hashable]


def reachable(nodes: Iterable[Hashable], edges: Iterable[Edge], root: Hashable) -> Set[Hashable]:
    adj: Dict[Hashable, List[Hashable]] = {n: [] for n in nodes}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def max_arborescence(nodes: Iterable[Hashable], weights: Mapping[Edge, float], root: Hashable) -> List[Edge]:
    """Edges of a maximum-weight spanning arborescence rooted at ``root``.

    ``weights`` maps directed edges ``(u, v)`` to weights.  Self loops and
    edges into the root are ignored.  Ties are resolved deterministically by
    the sorted order of the edges.

    Raises :class:`DisconnectedStructureError` listing every node that cannot
    be reached from the root.
    """
    nodes = list(nodes)
    if root not in nodes:
        raise ValueError(f"root {root!r} is not a node")
    usable = sorted(((u, v) for (u, v) in weights if u != v and v != root and u in nodes and v in nodes),
                    key=lambda e: (str(e[0]), str(e[1])))
    missing = set(nodes) - reachable(nodes, usable, root)
    if missing:
        raise DisconnectedStructureError([str(m) for m in missing])
    if len(nodes) == 1:
        return []

    index = {n: i for i, n in enumerate(nodes)}
    edge_list = [(index[u], index[v], float(weights[(u, v)]), k) for k, (u, v) in enumerate(usable)]
    chosen = _edmonds(list(range(len(nodes))), edge_list, index[root], len(nodes))
    return [usable[k] for k in sorted(chosen)]


def _edmonds(nodes: List[int], edges: List[Tuple[int, int, float, int]], root: int, next_id: int) -> Set[int]:
    best_in: Dict[int, Tuple[int, int, float, int]] = {}
    for e in edges:
        u, v, w, k = e
        if v == root or u == v:
            continue
        cur = best_in.get(v)
        # higher weight wins; on equal weight the earlier edge id wins
        if cur is None or w > cur[2] or (w == cur[2] and k < cur[3]):
            best_in[v] = e

    cycle = _find_cycle(best_in, root)
    if cycle is None:
        return {e[3] for e in best_in.values()}

    in_cycle = set(cycle)
    x = next_id
    cycle_w = {v: best_in[v][2] for v in cycle}
    entering_node: Dict[int, int] = {}
    new_edges = []
    for u, v, w, k in edges:
        if u in in_cycle and v in in_cycle:
            continue
        if v in in_cycle:
            entering_node[k] = v
            new_edges.append((u, x, w - cycle_w[v], k))
        elif u in in_cycle:
            new_edges.append((x, v, w, k))
        else:
            new_edges.append((u, v, w, k))
    new_nodes = [n for n in nodes if n not in in_cycle] + [x]
    sub = _edmonds(new_nodes, new_edges, root, next_id + 1)

    enter = next(k for k in sub if k in entering_node)
    broken = entering_node[enter]
    result = set(sub)
    result.update(best_in[v][3] for v in cycle if v != broken)
    return result


def _find_cycle(parent_edge: Mapping[int, Tuple[int, int, float, int]], root: int):
    state: Dict[int, int] = {}
    for start in sorted(parent_edge):
        path = []
        v = start
        while v != root and v in parent_edge and state.get(v, 0) == 0:
            state[v] = 1
            path.append(v)
            v = parent_edge[v][0]
        if v != root and state.get(v) == 1 and v in path:
            return path[path.index(v):]
        for p in path:
            state[p] = 2
    return None
