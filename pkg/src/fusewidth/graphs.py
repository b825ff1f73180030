"""Simple undirected graphs: Gaifman graphs, connectivity, exact tree-width.

Tree-width is computed by the elimination-ordering dynamic program over
vertex subsets (O(2^n) states), which is exact and fast enough for the
bounded instances this package works with.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .core import Structure, color_name, color_of
from .errors import DomainError, ResourceError


class SimpleGraph:
    """Immutable simple undirected graph over hashable vertices."""

    __slots__ = ("vertices", "edges", "_key")

    def __init__(self, vertices: Iterable, edges: Iterable[Iterable]):
        vs = frozenset(vertices)
        es = set()
        for e in edges:
            pair = frozenset(e)
            if len(pair) != 2:
                raise DomainError(f"edge {set(e)} is not a 2-element set")
            if not pair <= vs:
                raise DomainError(f"edge {set(e)} mentions unknown vertex")
            es.add(pair)
        object.__setattr__(self, "vertices", vs)
        object.__setattr__(self, "edges", frozenset(es))
        object.__setattr__(self, "_key", (vs, frozenset(es)))

    def __setattr__(self, *a):
        raise AttributeError("SimpleGraph is immutable")

    def __eq__(self, other):
        return isinstance(other, SimpleGraph) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"SimpleGraph({len(self.vertices)} vertices, {len(self.edges)} edges)"

    def adjacency(self) -> dict:
        adj = {v: set() for v in self.vertices}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def has_edge(self, a, b) -> bool:
        return frozenset((a, b)) in self.edges


def gaifman(s: Structure) -> SimpleGraph:
    """Gaifman graph: an edge joins every pair of distinct elements that
    co-occur in some relation tuple."""
    edges = set()
    for ts in s.rel.values():
        for t in ts:
            for i in range(len(t)):
                for j in range(i + 1, len(t)):
                    if t[i] != t[j]:
                        edges.add(frozenset((t[i], t[j])))
    return SimpleGraph(s.universe(), edges)


def connected_components(g: SimpleGraph) -> list[frozenset]:
    adj = g.adjacency()
    seen: set = set()
    comps = []
    for v in sorted(g.vertices, key=repr):
        if v in seen:
            continue
        comp = {v}
        stack = [v]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in comp:
                    comp.add(y)
                    stack.append(y)
        seen |= comp
        comps.append(frozenset(comp))
    return comps


def is_graph_connected(g: SimpleGraph) -> bool:
    return len(connected_components(g)) <= 1


def is_connected(s: Structure) -> bool:
    """Connectivity of the structure's Gaifman graph."""
    return is_graph_connected(gaifman(s))


def exact_treewidth(g: SimpleGraph, max_vertices: int = 20) -> int:
    """Exact tree-width via the subset DP over elimination orderings.

    ``width[S]`` is the best attainable maximum elimination degree when the
    vertex set ``S`` has been eliminated first; eliminating ``v`` after ``S``
    costs the number of non-eliminated vertices reachable from ``v``
    through ``S``.  Raises ``ResourceError`` above ``max_vertices``.
    """
    vs = sorted(g.vertices, key=repr)
    n = len(vs)
    if n > max_vertices:
        raise ResourceError(f"graph has {n} > {max_vertices} vertices")
    if n == 0:
        return -1
    idx = {v: i for i, v in enumerate(vs)}
    adj = [0] * n
    for e in g.edges:
        a, b = tuple(e)
        adj[idx[a]] |= 1 << idx[b]
        adj[idx[b]] |= 1 << idx[a]

    full = (1 << n) - 1
    # nb[mask] = union of adjacencies of the vertices in mask
    nb = [0] * (full + 1)
    for mask in range(1, full + 1):
        low = mask & -mask
        nb[mask] = nb[mask ^ low] | adj[low.bit_length() - 1]

    INF = n + 1
    width = [INF] * (full + 1)
    width[0] = -1
    for mask in range(1, full + 1):
        best = INF
        rest = mask
        while rest:
            low = rest & -rest
            rest ^= low
            prev = width[mask ^ low]
            if prev >= best:
                continue
            sub = mask ^ low
            comp = low
            while True:
                grow = nb[comp] & sub & ~comp
                if not grow:
                    break
                comp |= grow
            degree = (nb[comp] & ~sub & ~low).bit_count()
            cost = prev if prev > degree else degree
            if cost < best:
                best = cost
        width[mask] = best
    return width[full]


def grid_graph(rows: int, cols: int) -> SimpleGraph:
    """The rows x cols grid."""
    vs = [(i, j) for i in range(rows) for j in range(cols)]
    edges = []
    for i, j in vs:
        if i + 1 < rows:
            edges.append(((i, j), (i + 1, j)))
        if j + 1 < cols:
            edges.append(((i, j), (i, j + 1)))
    return SimpleGraph(vs, edges)


def complete_graph(n: int) -> SimpleGraph:
    return SimpleGraph(range(n), [(i, j) for i in range(n) for j in range(i + 1, n)])


def contract_groups(g: SimpleGraph, groups: Mapping) -> SimpleGraph:
    """Contract each group of vertices to a single vertex (groups must
    partition the vertex set); the result is a minor of ``g`` whenever the
    groups induce connected subgraphs."""
    owner = {}
    for name, members in groups.items():
        for v in members:
            if v in owner:
                raise DomainError(f"vertex {v!r} in two groups")
            owner[v] = name
    if set(owner) != set(g.vertices):
        raise DomainError("groups do not cover the vertex set")
    edges = set()
    for e in g.edges:
        a, b = tuple(e)
        if owner[a] != owner[b]:
            edges.add(frozenset((owner[a], owner[b])))
    return SimpleGraph(groups.keys(), edges)


def graph_to_dot(g: SimpleGraph, labels: Mapping | None = None, name: str = "G") -> str:
    labels = labels or {}
    order = {v: i for i, v in enumerate(sorted(g.vertices, key=repr))}
    lines = [f"graph {name} {{"]
    for v in sorted(g.vertices, key=repr):
        lab = labels.get(v, str(v))
        lines.append(f'  n{order[v]} [label="{lab}"];')
    for e in sorted(g.edges, key=lambda e: sorted(map(repr, e))):
        a, b = sorted(e, key=repr)
        lines.append(f"  n{order[a]} -- n{order[b]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def structure_to_dot(s: Structure, name: str = "G") -> str:
    """DOT rendering of the Gaifman graph with color-set node labels."""
    g = gaifman(s)
    consts: dict[int, list[str]] = {}
    for c, e in s.const.items():
        consts.setdefault(e, []).append(c)
    labels = {}
    for u in s.universe():
        lab = f"{u}:{color_name(color_of(s, u))}"
        if u in consts:
            lab += " " + ",".join(sorted(consts[u]))
        labels[u] = lab
    return graph_to_dot(g, labels, name)
