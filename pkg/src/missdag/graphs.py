"""Directed acyclic graphs, missingness graphs and d-separation queries.

Graphs are immutable once built: every query is read-only, so instances can
be shared freely across worker processes.
"""

from __future__ import annotations

import json
import re
from collections import deque
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Tuple

from .errors import (
    CycleDetected,
    DuplicateEdge,
    InvalidMGraph,
    OverlappingSets,
    UnknownVertex,
)

Edge = Tuple[str, str]


class VertexClass(Enum):
    OBSERVED = "observed"
    LATENT = "latent"
    PARTIALLY_OBSERVED = "partially_observed"
    PROXY = "proxy"
    INDICATOR = "indicator"


class MechanismClass(Enum):
    MCAR = "MCAR"
    MAR = "MAR"
    MNAR = "MNAR"


class Dag:
    """Immutable directed acyclic graph over string-named vertices."""

    __slots__ = ("_vertices", "_index", "_edges", "_parents", "_children")

    def __init__(self, vertices: Sequence[str], edges: Iterable[Edge] = ()):
        verts = tuple(vertices)
        if len(set(verts)) != len(verts):
            raise UnknownVertex("duplicate vertex names in declaration")
        if any(not v for v in verts):
            raise UnknownVertex("empty vertex name")
        self._vertices = verts
        self._index = {v: i for i, v in enumerate(verts)}
        parents = {v: set() for v in verts}
        children = {v: set() for v in verts}
        edge_set = set()
        for p, c in edges:
            if p not in self._index:
                raise UnknownVertex(f"unknown vertex {p!r}")
            if c not in self._index:
                raise UnknownVertex(f"unknown vertex {c!r}")
            if p == c:
                raise CycleDetected([p, c])
            if (p, c) in edge_set:
                raise DuplicateEdge(f"duplicate edge ({p!r}, {c!r})")
            edge_set.add((p, c))
            parents[c].add(p)
            children[p].add(c)
        self._edges = frozenset(edge_set)
        self._parents = {v: frozenset(s) for v, s in parents.items()}
        self._children = {v: frozenset(s) for v, s in children.items()}
        cyc = self._find_cycle()
        if cyc is not None:
            raise CycleDetected(cyc)

    def _find_cycle(self):
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {v: WHITE for v in self._vertices}
        stack_path = []

        def visit(v):
            color[v] = GRAY
            stack_path.append(v)
            for c in sorted(self._children[v]):
                if color[c] == GRAY:
                    i = stack_path.index(c)
                    return stack_path[i:] + [c]
                if color[c] == WHITE:
                    found = visit(c)
                    if found is not None:
                        return found
            stack_path.pop()
            color[v] = BLACK
            return None

        for v in self._vertices:
            if color[v] == WHITE:
                found = visit(v)
                if found is not None:
                    return found
        return None

    @property
    def vertices(self) -> Tuple[str, ...]:
        return self._vertices

    @property
    def edges(self) -> frozenset:
        return self._edges

    def parents(self, v: str) -> frozenset:
        self._check(v)
        return self._parents[v]

    def children(self, v: str) -> frozenset:
        self._check(v)
        return self._children[v]

    def has_edge(self, p: str, c: str) -> bool:
        return (p, c) in self._edges

    def _check(self, v: str) -> None:
        if v not in self._index:
            raise UnknownVertex(f"unknown vertex {v!r}")

    def ancestors(self, of: Iterable[str]) -> set:
        """All vertices with a directed path into `of`, plus `of` itself."""
        seen = set()
        stack = list(of)
        for v in stack:
            self._check(v)
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(self._parents[v])
        return seen

    def topological_order(self) -> list:
        indeg = {v: len(self._parents[v]) for v in self._vertices}
        ready = [v for v in self._vertices if indeg[v] == 0]
        out = []
        while ready:
            v = ready.pop(0)
            out.append(v)
            for c in sorted(self._children[v], key=self._index.__getitem__):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        return out

    def with_vertices(self, keep: Iterable[str]) -> "Dag":
        """Induced subgraph on `keep`, preserving the declared order."""
        keep = set(keep)
        verts = [v for v in self._vertices if v in keep]
        edges = [(p, c) for (p, c) in self._edges if p in keep and c in keep]
        return Dag(verts, edges)

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return self._vertices == other._vertices and self._edges == other._edges

    def __hash__(self):
        return hash((self._vertices, self._edges))

    def __repr__(self):
        es = sorted(self._edges)
        return f"Dag(vertices={list(self._vertices)!r}, edges={es!r})"


def build_dag(vertices: Sequence[str], edges: Iterable[Edge] = ()) -> Dag:
    return Dag(vertices, edges)


class MGraph:
    """Missingness graph: a DAG plus the five-way vertex partition.

    Partially observed variables are wired to a proxy and a missingness
    indicator; the proxy has exactly the parents {variable, indicator} and
    no children, and the indicator's only child is its proxy.
    """

    __slots__ = ("graph", "classes", "wiring")

    def __init__(self, graph: Dag, classes: Mapping[str, VertexClass],
                 wiring: Mapping[str, Tuple[str, str]]):
        if set(classes) != set(graph.vertices):
            raise InvalidMGraph("classes must cover exactly the vertex set")
        self.graph = graph
        self.classes = dict(classes)
        self.wiring = {k: tuple(v) for k, v in wiring.items()}
        self._validate()

    def members(self, cls: VertexClass) -> list:
        return [v for v in self.graph.vertices if self.classes[v] is cls]

    def _validate(self) -> None:
        m = set(self.members(VertexClass.PARTIALLY_OBSERVED))
        s = set(self.members(VertexClass.PROXY))
        r = set(self.members(VertexClass.INDICATOR))
        if set(self.wiring) != m:
            raise InvalidMGraph("wiring keys must be the partially observed set")
        proxies = [w[0] for w in self.wiring.values()]
        indicators = [w[1] for w in self.wiring.values()]
        if set(proxies) != s or len(set(proxies)) != len(proxies):
            raise InvalidMGraph("proxy wiring is not a bijection onto S")
        if set(indicators) != r or len(set(indicators)) != len(indicators):
            raise InvalidMGraph("indicator wiring is not a bijection onto R")
        g = self.graph
        for x, (sx, rx) in self.wiring.items():
            if g.parents(sx) != frozenset({x, rx}):
                raise InvalidMGraph(f"proxy {sx!r} must have parents {{{x!r}, {rx!r}}}")
            if g.children(sx):
                raise InvalidMGraph(f"proxy {sx!r} must have no children")
            if g.parents(rx) & s:
                raise InvalidMGraph(f"indicator {rx!r} must have no parents in S")
            if g.children(rx) - {sx}:
                raise InvalidMGraph(f"indicator {rx!r} may only point to {sx!r}")


def d_separated(g: Dag, x: Iterable[str], y: Iterable[str], z: Iterable[str]) -> bool:
    """True iff z blocks every path between x and y.

    Linear-time reachability over active trails (Koller & Friedman
    alg. 3.1); agreement with literal path enumeration is enforced by the
    test suite.
    """
    xs, ys, zs = set(x), set(y), set(z)
    for v in xs | ys | zs:
        g._check(v)
    if xs & ys or xs & zs or ys & zs:
        raise OverlappingSets("x, y, z must be pairwise disjoint")
    if not xs or not ys:
        return True
    anc_z = g.ancestors(zs) if zs else set()
    # (vertex, direction): direction True = arrived via edge into vertex
    visited = set()
    queue = deque((v, False) for v in xs)  # leaving the source upward
    while queue:
        v, came_down = queue.popleft()
        if (v, came_down) in visited:
            continue
        visited.add((v, came_down))
        if v in ys:
            return False
        if not came_down:
            # trail currently moving against edge direction
            if v not in zs:
                for p in g.parents(v):
                    queue.append((p, False))
                for c in g.children(v):
                    queue.append((c, True))
        else:
            # arrived along an edge into v
            if v not in zs:
                for c in g.children(v):
                    queue.append((c, True))
            if v in anc_z:
                for p in g.parents(v):
                    queue.append((p, False))
    return True


def _undirected_neighbors(g: Dag, v: str) -> set:
    return set(g.parents(v)) | set(g.children(v))


def _path_active(g: Dag, path: Sequence[str], zs: set) -> bool:
    """Apply the fork/chain/collider blocking rules to one simple path."""
    if len(path) == 2:
        return True
    desc_cache = {}
    for i in range(1, len(path) - 1):
        a, b, c = path[i - 1], path[i], path[i + 1]
        collider = g.has_edge(a, b) and g.has_edge(c, b)
        if collider:
            if b not in desc_cache:
                # descendants of b, b included
                seen = set()
                stack = [b]
                while stack:
                    w = stack.pop()
                    if w in seen:
                        continue
                    seen.add(w)
                    stack.extend(g.children(w))
                desc_cache[b] = seen
            if not (desc_cache[b] & zs):
                return False
        else:
            if b in zs:
                return False
    return True


def find_active_path(g: Dag, x: Iterable[str], y: Iterable[str],
                     z: Iterable[str]) -> Optional[list]:
    """One active path between x and y given z, or None if d-separated.

    Exhaustive over simple paths; intended for witness reporting on small
    graphs, not for hot loops.
    """
    xs, ys, zs = set(x), set(y), set(z)
    for v in xs | ys | zs:
        g._check(v)
    if xs & ys or xs & zs or ys & zs:
        raise OverlappingSets("x, y, z must be pairwise disjoint")
    order = {v: i for i, v in enumerate(g.vertices)}

    def dfs(path):
        v = path[-1]
        if v in ys:
            if _path_active(g, path, zs):
                return list(path)
            return None
        for w in sorted(_undirected_neighbors(g, v), key=order.__getitem__):
            if w in path or (w in xs):
                continue
            path.append(w)
            found = dfs(path)
            if found is not None:
                return found
            path.pop()
        return None

    for s in sorted(xs, key=order.__getitem__):
        found = dfs([s])
        if found is not None:
            return found
    return None


def classify_mechanism(m: MGraph) -> MechanismClass:
    """MCAR / MAR / MNAR from the graph alone.

    Proxy vertices (deterministic functions of their parents) are dropped
    before testing the independence statements, so only the substantive
    variables and the indicators remain.
    """
    o = m.members(VertexClass.OBSERVED)
    u = m.members(VertexClass.LATENT)
    mm = m.members(VertexClass.PARTIALLY_OBSERVED)
    r = m.members(VertexClass.INDICATOR)
    s = set(m.members(VertexClass.PROXY))
    stripped = m.graph.with_vertices(set(m.graph.vertices) - s)
    if not r:
        return MechanismClass.MCAR
    if d_separated(stripped, set(o) | set(u) | set(mm), r, set()):
        return MechanismClass.MCAR
    if d_separated(stripped, set(u) | set(mm), r, o):
        return MechanismClass.MAR
    return MechanismClass.MNAR


def implied_mgraph(base: Dag, partially_observed: Iterable[str],
                   indicator_parents: Mapping[str, Iterable[str]],
                   latent: Iterable[str] = ()) -> MGraph:
    """Extend a substantive DAG with indicator/proxy wiring.

    `indicator_parents[x]` lists the substantive causes of x's missingness
    (empty for MCAR); the proxy and indicator vertices are named S_x / R_x.
    """
    part = list(partially_observed)
    lat = set(latent)
    verts = list(base.vertices)
    edges = list(base.edges)
    wiring = {}
    for v in part:
        base._check(v)
        sx, rx = f"S_{v}", f"R_{v}"
        verts.extend([rx, sx])
        edges.append((v, sx))
        edges.append((rx, sx))
        for p in indicator_parents.get(v, ()):
            edges.append((p, rx))
        wiring[v] = (sx, rx)
    classes = {}
    for v in base.vertices:
        if v in lat:
            classes[v] = VertexClass.LATENT
        elif v in wiring:
            classes[v] = VertexClass.PARTIALLY_OBSERVED
        else:
            classes[v] = VertexClass.OBSERVED
    for v, (sx, rx) in wiring.items():
        classes[sx] = VertexClass.PROXY
        classes[rx] = VertexClass.INDICATOR
    return MGraph(Dag(verts, edges), classes, wiring)


# --- serialization ---

_ROLE_COLORS = {
    "treatment": "blue",
    "outcome": "red",
    "event": "orange",
    "biomarker": "lightblue",
    "context": "gray",
}

def export_dot(g: Dag, classes: Optional[Mapping[str, VertexClass]] = None,
               roles: Optional[Mapping[str, str]] = None) -> str:
    """Deterministic DOT text: vertices in declared order, edges sorted."""
    order = {v: i for i, v in enumerate(g.vertices)}
    lines = ["digraph G {"]
    for v in g.vertices:
        attrs = []
        if roles and v in roles:
            color = _ROLE_COLORS.get(roles[v], roles[v])
            attrs.append(f'style=filled fillcolor="{color}"')
        if classes and classes[v] is VertexClass.LATENT:
            attrs.append("style=dashed")
        elif classes and classes[v] is VertexClass.PROXY:
            attrs.append("shape=box")
        elif classes and classes[v] is VertexClass.INDICATOR:
            attrs.append("shape=diamond")
        body = f' [{" ".join(attrs)}]' if attrs else ""
        lines.append(f'  "{v}"{body};')
    for p, c in sorted(g.edges, key=lambda e: (order[e[0]], order[e[1]])):
        lines.append(f'  "{p}" -> "{c}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


_DOT_NODE = re.compile(r'^\s*"([^"]+)"(?:\s*\[[^\]]*\])?;\s*$')
_DOT_EDGE = re.compile(r'^\s*"([^"]+)"\s*->\s*"([^"]+)";\s*$')


def parse_dot(text: str) -> Dag:
    """Read back the DOT dialect emitted by export_dot."""
    verts, edges = [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("digraph") or line == "}":
            continue
        m = _DOT_EDGE.match(line)
        if m:
            edges.append((m.group(1), m.group(2)))
            continue
        m = _DOT_NODE.match(line)
        if m:
            verts.append(m.group(1))
            continue
        raise UnknownVertex(f"unparseable DOT line: {line!r}")
    return Dag(verts, edges)


def graph_to_json(g: Dag, classes: Optional[Mapping[str, VertexClass]] = None) -> str:
    doc = {
        "vertices": list(g.vertices),
        "edges": sorted([list(e) for e in g.edges]),
    }
    if classes is not None:
        doc["classes"] = {v: classes[v].value for v in g.vertices}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def graph_from_json(text: str):
    """Returns (Dag, classes-or-None)."""
    doc = json.loads(text)
    g = Dag(doc["vertices"], [tuple(e) for e in doc.get("edges", [])])
    classes = None
    if "classes" in doc:
        classes = {v: VertexClass(c) for v, c in doc["classes"].items()}
        if set(classes) != set(g.vertices):
            raise InvalidMGraph("classes must cover exactly the vertex set")
    return g, classes
