"""Minimum-weight route computation for paths and trees.

Paths are computed on the directed graph with per-edge weights.  Trees
(broadcast/multicast) treat the graph as undirected: a link's weight is the
sum of both directions' weights, the tree is chosen on those pair weights
and then oriented away from the root.  Keeping tree selection symmetric is
what preserves the metric-closure 2-approximation bound for Steiner trees.

All tie-breaking is deterministic: paths prefer lower total weight, then
fewer hops, then the lexicographically smallest node sequence; tree edges
tie-break on edge id.  Identical inputs always yield identical routes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .topology import NetworkGraph

__all__ = [
    "RoutingError",
    "UnreachableError",
    "PathRoute",
    "TreeRoute",
    "Route",
    "min_weight_path",
    "min_weight_spanning_tree",
    "steiner_tree_approx",
    "anycast_route",
    "route_weight",
    "validate_route",
]


class RoutingError(ValueError):
    pass


class UnreachableError(RoutingError):
    pass


@dataclass(frozen=True)
class PathRoute:
    nodes: tuple[int, ...]
    edges: tuple[int, ...]


@dataclass
class TreeRoute:
    """Rooted tree: ``children`` maps a node to its outgoing tree edge ids."""

    root: int
    edges: tuple[int, ...]
    children: dict[int, tuple[int, ...]]
    terminals: frozenset[int]


Route = Union[PathRoute, TreeRoute]


def _dijkstra_labels(
    g: NetworkGraph,
    w: Sequence[float],
    s: int,
    allowed: Sequence[bool] | None = None,
    target: int | None = None,
) -> dict[int, tuple[float, int, tuple[int, ...]]]:
    """Settled labels (weight, hops, node sequence), lexicographic preference.

    All three label components are monotone under edge extension, so the
    first time a node is popped its label is globally optimal.
    """
    labels: dict[int, tuple[float, int, tuple[int, ...]]] = {}
    heap: list[tuple[float, int, tuple[int, ...]]] = [(0.0, 0, (s,))]
    edges = g.edges
    out = g.out_edges
    while heap:
        d, h, nodes = heapq.heappop(heap)
        u = nodes[-1]
        if u in labels:
            continue
        labels[u] = (d, h, nodes)
        if u == target:
            break
        for eid in out[u]:
            if allowed is not None and not allowed[eid]:
                continue
            v = edges[eid].v
            if v not in labels:
                heapq.heappush(heap, (d + w[eid], h + 1, nodes + (v,)))
    return labels


def _edges_of_node_path(g: NetworkGraph, nodes: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    for u, v in zip(nodes, nodes[1:]):
        eid = g.edge_between(u, v)
        assert eid is not None
        out.append(eid)
    return tuple(out)


def min_weight_path(
    g: NetworkGraph,
    w: Sequence[float],
    s: int,
    t: int,
    allowed: Sequence[bool] | None = None,
) -> PathRoute:
    """Cheapest s-t path; ties go to fewer hops, then smallest node sequence."""
    if s == t:
        raise RoutingError(f"degenerate route request: source equals destination ({s})")
    labels = _dijkstra_labels(g, w, s, allowed, target=t)
    if t not in labels:
        raise UnreachableError(f"node {t} unreachable from {s}")
    _, _, nodes = labels[t]
    return PathRoute(nodes=nodes, edges=_edges_of_node_path(g, nodes))


def anycast_route(
    g: NetworkGraph,
    w: Sequence[float],
    s: int,
    candidates: Iterable[int],
    allowed: Sequence[bool] | None = None,
) -> PathRoute:
    """Cheapest path to any one of the candidate destinations."""
    cands = sorted(set(candidates) - {s})
    if not cands:
        raise RoutingError("anycast needs at least one candidate destination")
    labels = _dijkstra_labels(g, w, s, allowed)
    best: tuple[float, int, tuple[int, ...]] | None = None
    for t in cands:
        lab = labels.get(t)
        if lab is not None and (best is None or lab < best):
            best = lab
    if best is None:
        raise UnreachableError(f"no anycast candidate reachable from {s}")
    return PathRoute(nodes=best[2], edges=_edges_of_node_path(g, best[2]))


# ---------------------------------------------------------------------------
# trees

class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _undirected_pairs(
    g: NetworkGraph, w: Sequence[float], allowed: Sequence[bool] | None
) -> list[tuple[float, int, int, int, int, int]]:
    """(pair weight, pair id, u, v, fwd edge, rev edge) per usable link."""
    pairs = []
    for fwd, twin in g.pairs():
        if twin is None:
            raise RoutingError("tree routing needs a bidirectional graph")
        if allowed is not None and not (allowed[fwd] and allowed[twin]):
            continue
        e = g.edges[fwd]
        pairs.append((w[fwd] + w[twin], e.pair, e.u, e.v, fwd, twin))
    return pairs


def _orient_tree(
    g: NetworkGraph,
    root: int,
    links: list[tuple[int, int, int, int]],
    terminals: frozenset[int],
) -> TreeRoute:
    """Orient undirected links (u, v, fwd, rev) away from root."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for u, v, fwd, rev in links:
        adj.setdefault(u, []).append((v, fwd))
        adj.setdefault(v, []).append((u, rev))
    children: dict[int, list[int]] = {}
    edges: list[int] = []
    seen = {root}
    queue = [root]
    while queue:
        u = queue.pop(0)
        for v, eid in sorted(adj.get(u, []), key=lambda item: item[1]):
            if v in seen:
                continue
            seen.add(v)
            children.setdefault(u, []).append(eid)
            edges.append(eid)
            queue.append(v)
    if len(edges) != len(links):
        raise RoutingError("tree links do not form a connected tree around the root")
    return TreeRoute(
        root=root,
        edges=tuple(sorted(edges)),
        children={u: tuple(kids) for u, kids in children.items()},
        terminals=terminals,
    )


def min_weight_spanning_tree(
    g: NetworkGraph,
    w: Sequence[float],
    root: int,
    allowed: Sequence[bool] | None = None,
) -> TreeRoute:
    """Minimum-weight spanning tree oriented away from root (Kruskal)."""
    pairs = sorted(_undirected_pairs(g, w, allowed), key=lambda p: (p[0], p[1]))
    uf = _UnionFind(g.n)
    links = []
    for _, _, u, v, fwd, rev in pairs:
        if uf.union(u, v):
            links.append((u, v, fwd, rev))
    if len(links) != g.n - 1:
        raise UnreachableError("graph is disconnected; no spanning tree exists")
    terminals = frozenset(range(g.n)) - {root}
    return _orient_tree(g, root, links, terminals)


def steiner_tree_approx(
    g: NetworkGraph,
    w: Sequence[float],
    root: int,
    terminals: Iterable[int],
    allowed: Sequence[bool] | None = None,
) -> TreeRoute:
    """Steiner tree via metric-closure MST; weight <= 2x the optimum.

    Shortest paths between required nodes are computed on the symmetrized
    weights, a spanning tree of the closure is expanded back to graph
    links, cycles are broken and non-terminal leaves pruned.
    """
    required = sorted(set(terminals) - {root})
    if not required:
        raise RoutingError("multicast needs at least one terminal besides the root")
    terms = [root] + required
    if not g.is_bidirectional:
        raise RoutingError("tree routing needs a bidirectional graph")
    ws = [w[e.id] + w[e.twin] for e in g.edges]
    label_maps = {}
    for a in terms:
        label_maps[a] = _dijkstra_labels(g, ws, a, allowed)
    for t in required:
        if t not in label_maps[root]:
            raise UnreachableError(f"terminal {t} unreachable from root {root}")

    # MST of the closure over the required nodes (Prim, deterministic ties).
    in_tree = {terms[0]}
    closure_links: list[tuple[int, int]] = []
    while len(in_tree) < len(terms):
        best = None
        for a in terms:
            if a not in in_tree:
                continue
            for b in terms:
                if b in in_tree or b not in label_maps[a]:
                    continue
                cand = (label_maps[a][b][0], a, b)
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise UnreachableError("terminals not mutually reachable")
        _, a, b = best
        in_tree.add(b)
        closure_links.append((a, b))

    pair_links: dict[int, tuple[int, int, int, int]] = {}
    for a, b in closure_links:
        nodes = label_maps[a][b][2]
        for u, v in zip(nodes, nodes[1:]):
            fwd = g.edge_between(u, v)
            rev = g.edges[fwd].twin
            pair = g.edges[fwd].pair
            if pair not in pair_links:
                uu, vv = (u, v) if fwd < rev else (v, u)
                ff = min(fwd, rev)
                pair_links[pair] = (uu, vv, ff, max(fwd, rev))

    # The union of expansion paths may contain cycles: keep a spanning
    # forest of the touched nodes (cheapest links first), then prune
    # branches that do not end in a required node.
    cand = sorted(
        pair_links.items(), key=lambda kv: (w[kv[1][2]] + w[kv[1][3]], kv[0])
    )
    uf = _UnionFind(g.n)
    links = [link for _, link in cand if uf.union(link[0], link[1])]

    needed = set(terms)
    while True:
        degree: dict[int, int] = {}
        for u, v, _, _ in links:
            degree[u] = degree.get(u, 0) + 1
            degree[v] = degree.get(v, 0) + 1
        removable = [
            link
            for link in links
            if (degree[link[0]] == 1 and link[0] not in needed)
            or (degree[link[1]] == 1 and link[1] not in needed)
        ]
        if not removable:
            break
        links = [link for link in links if link not in removable]

    return _orient_tree(g, root, links, frozenset(required))


# ---------------------------------------------------------------------------
# helpers

def route_weight(g: NetworkGraph, w: Sequence[float], route: Route) -> float:
    """Total weight over the oriented edges a packet on this route crosses."""
    return sum(w[e] for e in route.edges)


def validate_route(g: NetworkGraph, route: Route) -> None:
    """Structural check; raises RoutingError on any violation."""
    if isinstance(route, PathRoute):
        if len(route.nodes) < 2:
            raise RoutingError("path must have at least two nodes")
        if len(set(route.nodes)) != len(route.nodes):
            raise RoutingError("path repeats a node")
        if len(route.edges) != len(route.nodes) - 1:
            raise RoutingError("path edge/node count mismatch")
        for (u, v), eid in zip(zip(route.nodes, route.nodes[1:]), route.edges):
            e = g.edges[eid]
            if (e.u, e.v) != (u, v):
                raise RoutingError(f"edge {eid} does not join {u}->{v}")
        return

    if len(set(route.edges)) != len(route.edges):
        raise RoutingError("tree repeats an edge")
    flat = [eid for kids in route.children.values() for eid in kids]
    if sorted(flat) != sorted(route.edges):
        raise RoutingError("children map inconsistent with edge set")
    seen = {route.root}
    queue = [route.root]
    while queue:
        u = queue.pop()
        for eid in route.children.get(u, ()):
            e = g.edges[eid]
            if e.u != u:
                raise RoutingError(f"edge {eid} not oriented away from {u}")
            if e.v in seen:
                raise RoutingError(f"tree revisits node {e.v}")
            seen.add(e.v)
            queue.append(e.v)
    if len(seen) != len(route.edges) + 1:
        raise RoutingError("tree edges unreachable from root")
    if not route.terminals <= seen:
        raise RoutingError("tree does not cover all terminals")
    # every leaf should serve a terminal, otherwise the tree carries waste
    child_nodes = {g.edges[e].v for e in route.edges}
    leaves = {v for v in child_nodes if v not in route.children}
    if not leaves <= route.terminals:
        raise RoutingError("tree has a leaf that is not a terminal")
