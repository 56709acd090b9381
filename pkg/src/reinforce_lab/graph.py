"""Finite weighted graphs, named families, and small exact expansion constants.

Edges are stored once, in generator order, as ``(u, v)`` pairs. A directed
edge is encoded as ``2 * e + o`` where ``o = 0`` means ``u -> v`` and
``o = 1`` means ``v -> u``; reversing a directed edge is ``d ^ 1``.
The CSR arrays (``indptr``, ``nbr``, ``nbr_edge``, ``nbr_dir``) are what the
simulation kernels consume.
"""
from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

MAX_CHEEGER_VERTICES = 22


class GraphError(ValueError):
    """Invalid graph construction or query."""


class Unreachable(GraphError):
    """Raised when a distance is requested between disconnected pieces."""


@dataclass(frozen=True)
class Graph:
    n: int
    edges: np.ndarray
    weight: np.ndarray
    v0: int = 0
    name: str = ""
    indptr: np.ndarray = field(init=False, repr=False, compare=False)
    nbr: np.ndarray = field(init=False, repr=False, compare=False)
    nbr_edge: np.ndarray = field(init=False, repr=False, compare=False)
    nbr_dir: np.ndarray = field(init=False, repr=False, compare=False)
    degree: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        n = int(self.n)
        if n < 1:
            raise GraphError("a graph needs at least one vertex")
        if len(weight) != len(edges):
            raise GraphError("one weight per edge is required")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise GraphError("self-loops are not allowed")
        keys = {tuple(sorted(map(int, uv))) for uv in edges}
        if len(keys) != len(edges):
            raise GraphError("multi-edges are not allowed")
        if np.any(~np.isfinite(weight)) or np.any(weight <= 0):
            raise GraphError("initial weights must be positive")
        if not 0 <= int(self.v0) < n:
            raise GraphError(f"start vertex {self.v0} out of range")

        degree = np.zeros(n, dtype=np.int64)
        np.add.at(degree, edges[:, 0], 1)
        np.add.at(degree, edges[:, 1], 1)
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(degree)
        nbr = np.empty(2 * len(edges), dtype=np.int64)
        nbr_edge = np.empty(2 * len(edges), dtype=np.int64)
        nbr_dir = np.empty(2 * len(edges), dtype=np.int64)
        fill = indptr[:-1].copy()
        for e, (u, v) in enumerate(edges):
            for a, b, o in ((u, v, 0), (v, u, 1)):
                k = fill[a]
                nbr[k], nbr_edge[k], nbr_dir[k] = b, e, 2 * e + o
                fill[a] += 1

        arrays = dict(edges=edges, weight=weight, indptr=indptr, nbr=nbr,
                      nbr_edge=nbr_edge, nbr_dir=nbr_dir, degree=degree)
        for key, arr in arrays.items():
            arr.flags.writeable = False
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "v0", int(self.v0))

    # --- basic accessors -------------------------------------------------

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def K(self) -> int:
        """Degree bound: the maximum degree actually present."""
        return int(self.degree.max()) if self.n else 0

    def neighbors(self, v: int) -> np.ndarray:
        return self.nbr[self.indptr[v]:self.indptr[v + 1]]

    def incident(self, v: int) -> np.ndarray:
        return self.nbr_edge[self.indptr[v]:self.indptr[v + 1]]

    def out_dirs(self, v: int) -> np.ndarray:
        """Directed edges leaving ``v``, in adjacency order."""
        return self.nbr_dir[self.indptr[v]:self.indptr[v + 1]]

    def edge_id(self, u: int, v: int) -> int:
        for k in range(self.indptr[u], self.indptr[u + 1]):
            if self.nbr[k] == v:
                return int(self.nbr_edge[k])
        raise GraphError(f"({u}, {v}) is not an edge")

    def directed(self, u: int, v: int) -> int:
        for k in range(self.indptr[u], self.indptr[u + 1]):
            if self.nbr[k] == v:
                return int(self.nbr_dir[k])
        raise GraphError(f"({u}, {v}) is not an edge")

    def src(self, d: int) -> int:
        return int(self.edges[d >> 1, d & 1])

    def dst(self, d: int) -> int:
        return int(self.edges[d >> 1, 1 - (d & 1)])

    def vertex_weight(self, v: int) -> float:
        """a_v, the sum of initial weights around ``v``."""
        return float(self.weight[self.incident(v)].sum())

    def with_weights(self, weight) -> "Graph":
        w = np.broadcast_to(np.asarray(weight, dtype=np.float64), (self.m,))
        return Graph(self.n, self.edges, w.copy(), self.v0, self.name)

    def with_v0(self, v0: int) -> "Graph":
        return Graph(self.n, self.edges, self.weight, v0, self.name)

    # --- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "vertices": self.n,
            "edges": [[int(u), int(v), float(w)]
                      for (u, v), w in zip(self.edges, self.weight)],
            "v0": self.v0,
        }

    @classmethod
    def from_json(cls, doc) -> "Graph":
        if isinstance(doc, str):
            doc = json.loads(doc)
        try:
            n = int(doc["vertices"])
            rows = doc["edges"]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"graph JSON needs 'vertices' and 'edges': {exc}") from None
        edges = [(int(r[0]), int(r[1])) for r in rows]
        weight = [float(r[2]) if len(r) > 2 else 1.0 for r in rows]
        return cls(n, np.array(edges, dtype=np.int64).reshape(-1, 2), weight,
                   int(doc.get("v0", 0)), doc.get("name", ""))


# --- families --------------------------------------------------------------


@dataclass(frozen=True)
class FamilySpec:
    """A named generator plus its integer parameters, e.g. ``path(5)``."""

    family: str
    params: tuple = ()

    _SYNTAX = re.compile(r"^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$")

    @classmethod
    def parse(cls, text) -> "FamilySpec":
        if isinstance(text, FamilySpec):
            return text
        if isinstance(text, dict):
            params = text.get("params", ())
            return cls(str(text["family"]), tuple(int(p) for p in params))
        m = cls._SYNTAX.match(str(text))
        if not m:
            raise GraphError(f"cannot parse family spec {text!r}")
        args = m.group(2)
        params = tuple(int(p) for p in args.split(",") if p.strip()) if args else ()
        return cls(m.group(1), params)

    def __str__(self):
        return f"{self.family}({','.join(map(str, self.params))})"


def _path_edges(n):
    return [(i, i + 1) for i in range(n - 1)]


def _tree_edges(k, depth):
    # heap order: children of i are k*i+1 .. k*i+k
    count = sum(k ** j for j in range(depth + 1))
    return count, [((c - 1) // k, c) for c in range(1, count)]


def _grid_edges(d, side):
    shape = (side,) * d
    idx = np.arange(side ** d).reshape(shape)
    edges = []
    for flat in range(side ** d):
        coord = np.unravel_index(flat, shape)
        for axis in range(d):
            if coord[axis] + 1 < side:
                nxt = list(coord)
                nxt[axis] += 1
                edges.append((flat, int(idx[tuple(nxt)])))
    return side ** d, edges


def _canopy_edges(cap):
    # backbone 0..cap; vertex j on the backbone roots a binary tree of depth j
    edges = _path_edges(cap + 1)
    n = cap + 1
    for j in range(1, cap + 1):
        frontier = [j]
        for _ in range(j):
            nxt = []
            for parent in frontier:
                for _ in range(2):
                    edges.append((parent, n))
                    nxt.append(n)
                    n += 1
            frontier = nxt
    return n, edges


def _stretched_tree_edges(depth):
    # level-l tree edges (l = 1 for the root's edges) become paths of l**2 edges
    edges = []
    n = 1
    frontier = [0]
    for level in range(1, depth + 1):
        nxt = []
        for parent in frontier:
            for _ in range(2):
                prev = parent
                for _ in range(level * level):
                    edges.append((prev, n))
                    prev = n
                    n += 1
                nxt.append(prev)
        frontier = nxt
    return n, edges


_FAMILIES = {
    "path": (1, lambda n: (n, _path_edges(n))),
    "cycle": (1, lambda n: (n, _path_edges(n) + [(n - 1, 0)])),
    "complete": (1, lambda n: (n, [(i, j) for i in range(n) for j in range(i + 1, n)])),
    "grid_box": (2, _grid_edges),
    "k_ary_tree": (2, _tree_edges),
    "canopy": (1, _canopy_edges),
    "stretched_binary_tree": (1, _stretched_tree_edges),
    "star": (1, lambda k: (k + 1, [(0, i) for i in range(1, k + 1)])),
}

_MINIMUMS = {"path": (1,), "cycle": (3,), "complete": (1,), "grid_box": (1, 1),
             "k_ary_tree": (1, 0), "canopy": (0,), "stretched_binary_tree": (0,),
             "star": (1,)}


def family_names() -> list[str]:
    return sorted(_FAMILIES)


def build_family(spec, weight: float = 1.0, v0: int | None = None) -> Graph:
    """Generate a named graph with a uniform initial weight.

    ``spec`` may be a :class:`FamilySpec`, a string such as ``"grid_box(2,5)"``
    or a dict ``{"family": ..., "params": [...]}``.
    """
    spec = FamilySpec.parse(spec)
    if spec.family not in _FAMILIES:
        raise GraphError(f"unknown family {spec.family!r}; known: {family_names()}")
    arity, gen = _FAMILIES[spec.family]
    if len(spec.params) != arity:
        raise GraphError(f"{spec.family} takes {arity} parameter(s), got {spec.params}")
    for p, lo in zip(spec.params, _MINIMUMS[spec.family]):
        if p < lo:
            raise GraphError(f"{spec} parameter {p} below minimum {lo}")
    if not weight > 0:
        raise GraphError("weight must be positive")
    n, edges = gen(*spec.params)
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return Graph(n, edges, np.full(len(edges), float(weight)),
                 0 if v0 is None else v0, str(spec))


def triangle(weight: float = 1.0) -> Graph:
    return build_family("cycle(3)", weight)


# --- metric helpers --------------------------------------------------------


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    """Hop distances from ``source``; -1 marks unreachable vertices."""
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in g.neighbors(u):
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(int(w))
    return dist


def dist_vertex_edge(g: Graph, v: int, e: int) -> int:
    """min(dist(v, e^-), dist(v, e^+)) for undirected edge id ``e``."""
    if not 0 <= e < g.m:
        raise GraphError(f"edge {e} not in graph")
    dist = bfs_distances(g, v)
    ends = [int(dist[u]) for u in g.edges[e] if dist[u] >= 0]
    if not ends:
        raise Unreachable(f"edge {e} unreachable from vertex {v}")
    return min(ends)


def edge_distances(g: Graph, v: int | None = None) -> np.ndarray:
    """dist(e, v) for every edge at once (-1 where unreachable)."""
    dist = bfs_distances(g, g.v0 if v is None else v)
    d = dist[g.edges]
    d = np.where(d < 0, np.iinfo(np.int64).max, d).min(axis=1)
    return np.where(d == np.iinfo(np.int64).max, -1, d)


def ball(g: Graph, v0: int | None = None, R: int = 0) -> Graph:
    """Induced subgraph on {v : dist(v0, v) <= R}.

    Retained vertices keep their relative order, so balls of heap-ordered
    trees and of paths started at an end are again members of the family.
    """
    if R < 0:
        raise GraphError("radius must be nonnegative")
    v0 = g.v0 if v0 is None else v0
    dist = bfs_distances(g, v0)
    keep = np.flatnonzero((dist >= 0) & (dist <= R))
    relabel = -np.ones(g.n, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))
    mask = (relabel[g.edges[:, 0]] >= 0) & (relabel[g.edges[:, 1]] >= 0)
    edges = relabel[g.edges[mask]]
    return Graph(len(keep), edges, g.weight[mask], int(relabel[v0]),
                 f"ball({g.name},{R})")


def edge_boundary(g: Graph, A: Iterable[int]) -> set[tuple[int, int]]:
    """Edges with exactly one endpoint in A, oriented (inside, outside)."""
    A = set(int(a) for a in A)
    out = set()
    for u, v in g.edges:
        u, v = int(u), int(v)
        if (u in A) != (v in A):
            out.add((u, v) if u in A else (v, u))
    return out


def vertex_boundary(g: Graph, A: Iterable[int]) -> set[int]:
    """External vertex boundary {x not in A : x adjacent to A}."""
    A = set(int(a) for a in A)
    return {int(w) for a in A for w in g.neighbors(a) if int(w) not in A}


def _check_cheeger_size(g):
    if g.n > MAX_CHEEGER_VERTICES:
        raise GraphError(f"exhaustive Cheeger search limited to {MAX_CHEEGER_VERTICES} vertices")
    if g.n < 2:
        raise GraphError("Cheeger constant needs at least two vertices")
    if np.any(bfs_distances(g, 0) < 0):
        raise GraphError("graph must be connected")


def _argmin_fraction(num, den):
    ratio = num / den
    best = np.flatnonzero(ratio == ratio.min())
    return min(Fraction(int(num[i]), int(den[i])) for i in best)


def cheeger_edge(g: Graph) -> Fraction:
    """min |boundary_E A| / Vol A over 1 <= |A| <= |V|/2, by enumeration."""
    _check_cheeger_size(g)
    best = None
    for lo in range(0, 1 << g.n, 1 << 16):
        masks = np.arange(max(lo, 1), min(lo + (1 << 16), 1 << g.n), dtype=np.int64)
        bits = (masks[:, None] >> np.arange(g.n)) & 1
        bits = bits[bits.sum(axis=1) <= g.n // 2]
        if not len(bits):
            continue
        cut = (bits[:, g.edges[:, 0]] ^ bits[:, g.edges[:, 1]]).sum(axis=1)
        vol = bits @ g.degree
        cand = _argmin_fraction(cut, vol)
        best = cand if best is None else min(best, cand)
    return best


def cheeger_vertex(g: Graph) -> Fraction:
    """min |external vertex boundary of A| / |A| over 1 <= |A| <= |V|/2."""
    _check_cheeger_size(g)
    adj = np.zeros(g.n, dtype=np.int64)
    for u, v in g.edges:
        adj[u] |= 1 << int(v)
        adj[v] |= 1 << int(u)
    best = None
    for lo in range(0, 1 << g.n, 1 << 16):
        masks = np.arange(max(lo, 1), min(lo + (1 << 16), 1 << g.n), dtype=np.int64)
        bits = (masks[:, None] >> np.arange(g.n)) & 1
        keep = bits.sum(axis=1) <= g.n // 2
        masks, bits = masks[keep], bits[keep]
        if not len(masks):
            continue
        reach = np.zeros(len(masks), dtype=np.int64)
        for v in range(g.n):
            reach |= np.where(bits[:, v] == 1, adj[v], 0)
        outside = reach & ~masks
        size = np.bitwise_count(outside).astype(np.int64)
        cand = _argmin_fraction(size, bits.sum(axis=1))
        best = cand if best is None else min(best, cand)
    return best


def geodesic(g: Graph, target: int, v0: int | None = None) -> list[int]:
    """Directed edges of a shortest path from ``v0`` to ``target``.

    Ties are broken towards the lowest-numbered neighbour, so for heap
    ordered trees this is the unique root-to-vertex path.
    """
    v0 = g.v0 if v0 is None else v0
    dist = bfs_distances(g, v0)
    if dist[target] < 0:
        raise Unreachable(f"vertex {target} unreachable from {v0}")
    path = []
    v = target
    while v != v0:
        prev = min(int(w) for w in g.neighbors(v) if dist[w] == dist[v] - 1)
        path.append(g.directed(prev, v))
        v = prev
    return path[::-1]


def is_chain(g: Graph, dirs: Sequence[int]) -> bool:
    """True if consecutive directed edges meet head to tail."""
    return all(g.dst(a) == g.src(b) for a, b in zip(dirs, dirs[1:]))
