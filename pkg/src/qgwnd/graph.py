"""Metric graphs, their per-edge discretization, and the Lebesgue norms on them.

A grid function is a plain 1-D complex array indexed by the mesh's raw
degrees of freedom: one entry per (edge, node) pair, edge after edge in the
order of ``MetricGraph.edges``.  Every edge carries its own copy of the value
at each of its endpoints; how those copies are tied together at a vertex is
decided later by the vertex couplings, never by the mesh.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

__all__ = [
    "Edge",
    "MetricGraph",
    "GraphError",
    "Mesh",
    "MeshError",
    "build_graph",
    "star",
    "half_line",
    "line_with_defects",
    "binary_tree",
    "discretize",
    "lp_norm",
    "space_time_norm",
    "edge_derivative",
    "check_grid_function",
]

VertexId = Hashable


class GraphError(ValueError):
    """Invalid graph description."""


class MeshError(ValueError):
    """Invalid discretization request."""


@dataclass(frozen=True)
class Edge:
    """One edge of a metric graph.

    ``start`` is the initial vertex (coordinate 0).  Internal edges also have
    an ``end`` vertex at coordinate ``length``; external edges have
    ``end=None`` and ``length=inf``.
    """

    name: str
    start: VertexId
    end: VertexId | None
    length: float

    @property
    def external(self) -> bool:
        return self.end is None


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[VertexId, ...]
    edges: tuple[Edge, ...]
    positions: Mapping[VertexId, float] | None = None

    def __post_init__(self):
        if not self.vertices:
            raise GraphError("graph has no vertices")
        if len(set(self.vertices)) != len(self.vertices):
            raise GraphError("duplicate vertex ids")
        known = set(self.vertices)
        names = [e.name for e in self.edges]
        if len(set(names)) != len(names):
            raise GraphError("duplicate edge names")
        for e in self.edges:
            if e.start not in known or (e.end is not None and e.end not in known):
                raise GraphError(f"edge {e.name!r} references an unknown vertex")
            if e.external:
                if not math.isinf(e.length):
                    raise GraphError(f"external edge {e.name!r} must have infinite length")
            elif not (e.length > 0 and math.isfinite(e.length)):
                raise GraphError(f"edge {e.name!r} has nonpositive or infinite length {e.length}")
        if not self.edges:
            raise GraphError("graph has no edges")
        self._check_connected()

    def _check_connected(self):
        adjacency: dict[VertexId, set] = {v: set() for v in self.vertices}
        for e in self.edges:
            if e.end is not None:
                adjacency[e.start].add(e.end)
                adjacency[e.end].add(e.start)
        seen = {self.vertices[0]}
        queue = deque(seen)
        while queue:
            v = queue.popleft()
            for w in adjacency[v] - seen:
                seen.add(w)
                queue.append(w)
        if len(seen) != len(self.vertices):
            missing = [v for v in self.vertices if v not in seen]
            raise GraphError(f"graph is disconnected; unreachable vertices: {missing}")

    @property
    def internal_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.external]

    @property
    def external_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.external]

    def incidence(self, v: VertexId) -> list[tuple[int, str]]:
        """Edge endpoints at ``v`` as ``(edge_index, "start"|"end")``.

        This order fixes the row/column order of the coupling matrices at ``v``.
        """
        out = []
        for i, e in enumerate(self.edges):
            if e.start == v:
                out.append((i, "start"))
            if e.end == v:
                out.append((i, "end"))
        return out

    def degree(self, v: VertexId) -> int:
        return len(self.incidence(v))

    def is_star(self) -> bool:
        return len(self.vertices) == 1 and all(e.external for e in self.edges)


def build_graph(spec: Mapping) -> MetricGraph:
    """Build a graph from a JSON-compatible description.

    Either ``{"factory": {"kind": "star", "n": 3}}`` (kinds: ``star``,
    ``half_line``, ``line_defects``, ``tree``) or an explicit
    ``{"vertices": [...], "edges": [{"from": u, "to": v, "length": l}, ...]}``
    where an external edge has ``"length": "external"`` and no ``"to"``.
    """
    if "factory" in spec:
        fac = dict(spec["factory"])
        kind = fac.pop("kind")
        makers: dict[str, Callable[..., MetricGraph]] = {
            "star": star,
            "half_line": half_line,
            "line_defects": line_with_defects,
            "tree": binary_tree,
        }
        if kind not in makers:
            raise GraphError(f"unknown graph factory {kind!r}")
        return makers[kind](**fac)

    try:
        vertices = tuple(spec["vertices"])
        raw_edges = spec["edges"]
    except KeyError as exc:
        raise GraphError(f"graph spec missing {exc.args[0]!r}") from None
    edges = []
    for i, item in enumerate(raw_edges):
        name = str(item.get("name", f"e{i}"))
        length = item.get("length")
        if length == "external" or item.get("external", False):
            if item.get("to") is not None:
                raise GraphError(f"external edge {name!r} cannot have a terminal vertex")
            edges.append(Edge(name, item["from"], None, math.inf))
        else:
            if "to" not in item:
                raise GraphError(f"internal edge {name!r} is dangling (no 'to' vertex)")
            if length is None:
                raise GraphError(f"internal edge {name!r} has no length")
            edges.append(Edge(name, item["from"], item["to"], float(length)))
    return MetricGraph(vertices, tuple(edges))


def star(n: int = 3) -> MetricGraph:
    """n half-lines glued at a single vertex ``"o"``."""
    if n < 1:
        raise GraphError("a star needs at least one edge")
    edges = tuple(Edge(f"e{j}", "o", None, math.inf) for j in range(n))
    return MetricGraph(("o",), edges)


def half_line() -> MetricGraph:
    return star(1)


def line_with_defects(points: Sequence[float] = (-1.0, 1.0)) -> MetricGraph:
    """The real line cut at the given defect points.

    The leftmost external edge runs from the first defect towards -inf, so its
    coordinate ``x`` corresponds to the position ``points[0] - x``.
    """
    pts = sorted(float(p) for p in points)
    if not pts:
        raise GraphError("need at least one defect point")
    if any(b - a <= 0 for a, b in zip(pts, pts[1:])):
        raise GraphError("defect points must be distinct")
    vertices = tuple(f"d{i}" for i in range(len(pts)))
    edges = [Edge("left", vertices[0], None, math.inf)]
    for i in range(len(pts) - 1):
        edges.append(Edge(f"mid{i}", vertices[i], vertices[i + 1], pts[i + 1] - pts[i]))
    edges.append(Edge("right", vertices[-1], None, math.inf))
    return MetricGraph(vertices, tuple(edges), positions=dict(zip(vertices, pts)))


def binary_tree(depth: int = 2, length: float | Sequence[float] = 1.0, trunk: bool = True) -> MetricGraph:
    """Regular binary tree whose last generation consists of half-lines.

    ``length`` is either one edge length for every internal generation or a
    sequence with one length per generation.  With ``trunk`` the root also
    carries an external edge, so every vertex has degree 3.
    """
    if depth < 1:
        raise GraphError("tree depth must be >= 1")
    lengths = [float(length)] * depth if np.isscalar(length) else [float(x) for x in length]
    if len(lengths) < depth - 1:
        raise GraphError("need one length per internal generation")
    vertices = ["r"]
    edges = []
    if trunk:
        edges.append(Edge("trunk", "r", None, math.inf))
    frontier = ["r"]
    for gen in range(depth):
        nxt = []
        for parent in frontier:
            for side in "ab":
                child = f"{parent}{side}"
                if gen == depth - 1:
                    edges.append(Edge(f"{parent}-{side}", parent, None, math.inf))
                else:
                    vertices.append(child)
                    edges.append(Edge(f"{parent}-{side}", parent, child, lengths[gen]))
                    nxt.append(child)
        frontier = nxt
    return MetricGraph(tuple(vertices), tuple(edges))


@dataclass(frozen=True)
class Mesh:
    """Uniform per-edge grids over a metric graph.

    External edges are cut at ``L_trunc``; the far end there is either fixed
    to zero (``"dirichlet"``) or left free (``"neumann"``).
    """

    graph: MetricGraph
    h: float
    L_trunc: float
    far_end: str
    nodes: tuple[np.ndarray, ...]
    offsets: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_edges(self) -> int:
        return len(self.nodes)

    def spacing(self, e: int) -> float:
        x = self.nodes[e]
        return float(x[1] - x[0])

    def edge_slice(self, e: int) -> slice:
        return slice(int(self.offsets[e]), int(self.offsets[e + 1]))

    def split(self, f: np.ndarray) -> list[np.ndarray]:
        return [f[..., self.edge_slice(e)] for e in range(self.n_edges)]

    def index(self, e: int, node: int) -> int:
        n = len(self.nodes[e])
        if node < 0:
            node += n
        if not 0 <= node < n:
            raise IndexError(node)
        return int(self.offsets[e] + node)

    def vertex_slots(self, v: VertexId) -> list[int]:
        """Raw indices of the boundary values at ``v``, in coupling order."""
        return [self.index(e, 0 if end == "start" else -1) for e, end in self.graph.incidence(v)]

    def far_nodes(self) -> list[int]:
        """Raw indices of the truncation points of external edges."""
        return [self.index(i, -1) for i, e in enumerate(self.graph.edges) if e.external]

    def coordinates(self) -> np.ndarray:
        return np.concatenate(self.nodes)

    def edge_ids(self) -> np.ndarray:
        return np.concatenate([np.full(len(x), e) for e, x in enumerate(self.nodes)])

    def sample(self, func: Callable[[int, np.ndarray], np.ndarray] | Sequence[Callable]) -> np.ndarray:
        """Evaluate a function given per edge.

        ``func`` is either ``func(edge_index, x)`` or a sequence with one
        callable ``f_e(x)`` per edge.
        """
        if callable(func):
            parts = [np.asarray(func(e, x), dtype=complex) * np.ones_like(x) for e, x in enumerate(self.nodes)]
        else:
            if len(func) != self.n_edges:
                raise ValueError("need one callable per edge")
            parts = [np.asarray(fe(x), dtype=complex) * np.ones_like(x) for fe, x in zip(func, self.nodes)]
        out = np.concatenate(parts)
        if self.far_end == "dirichlet":
            out[self.far_nodes()] = 0.0
        return out

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size, dtype=complex)


def discretize(
    g: MetricGraph,
    h: float,
    L_trunc: float = 20.0,
    far_end: str = "dirichlet",
    h_overrides: Mapping[str, float] | None = None,
) -> Mesh:
    """Uniform grid of spacing at most ``h`` on every edge.

    Internal edges of length ``l`` get ``ceil(l/h)`` cells; external edges are
    truncated to ``[0, L_trunc]``.  ``h_overrides`` maps edge names to their
    own spacing.
    """
    if not h > 0:
        raise MeshError("h must be positive")
    if far_end not in ("dirichlet", "neumann"):
        raise MeshError(f"unknown far-end condition {far_end!r}")
    overrides = dict(h_overrides or {})
    unknown = set(overrides) - {e.name for e in g.edges}
    if unknown:
        raise MeshError(f"h_overrides name unknown edges: {sorted(unknown)}")
    if g.external_edges and L_trunc < 10 * max([h, *overrides.values()]):
        raise MeshError(f"L_trunc={L_trunc} must be at least 10*h")

    nodes = []
    for e in g.edges:
        he = float(overrides.get(e.name, h))
        length = L_trunc if e.external else e.length
        if not e.external and he > e.length / 3 + 1e-12:
            raise MeshError(
                f"h={he} exceeds a third of edge {e.name!r} (length {e.length}); "
                "edges need at least 3 cells"
            )
        cells = max(int(math.ceil(length / he - 1e-9)), 3)
        nodes.append(np.linspace(0.0, length, cells + 1))
    counts = [len(x) for x in nodes]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    weights = np.concatenate([_trapezoid_weights(x) for x in nodes])
    return Mesh(g, float(h), float(L_trunc), far_end, tuple(nodes), offsets, weights)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def check_grid_function(mesh: Mesh, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[-1] != mesh.size:
        raise ValueError(f"grid function has {f.shape[-1]} entries, mesh has {mesh.size}")
    if not np.all(np.isfinite(f)):
        raise ValueError("grid function has non-finite entries")
    return f


def lp_norm(mesh: Mesh, f: np.ndarray, p: float = 2) -> float | np.ndarray:
    """L^p(graph) norm by the trapezoidal rule; ``p=inf`` is the nodal max.

    A 2-D ``f`` is treated as a stack of grid functions (last axis = DOFs).
    """
    a = np.abs(np.asarray(f))
    if math.isinf(p):
        return a.max(axis=-1)
    if p < 1:
        raise ValueError("p must be >= 1")
    return (a**p @ mesh.weights) ** (1.0 / p)


def space_time_norm(mesh: Mesh, times: np.ndarray, states: np.ndarray, r: float, p: float) -> float:
    """(int_0^T ||X(t)||_p^r dt)^(1/r) by the trapezoidal rule in time.

    ``states`` has one grid function per row; ``r=inf`` takes the max over
    the time samples.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty trajectory")
    norms = np.atleast_1d(lp_norm(mesh, states, p))
    return time_norm(times, norms, r)


def time_norm(times: np.ndarray, norms: np.ndarray, r: float) -> float:
    """L^r norm in time of sampled spatial norms."""
    if len(times) == 0:
        raise ValueError("empty trajectory")
    if math.isinf(r):
        return float(np.max(norms))
    if len(times) == 1:
        return 0.0
    return float(np.trapezoid(norms**r, times) ** (1.0 / r))


def edge_derivative(mesh: Mesh, f: np.ndarray) -> np.ndarray:
    """d/dx along each edge, second-order finite differences.

    One-sided three-point stencils at the edge ends, so endpoint values are
    the one-sided derivatives into the edge.
    """
    f = np.asarray(f)
    out = np.empty(f.shape, dtype=np.result_type(f, float))
    for e, x in enumerate(mesh.nodes):
        sl = mesh.edge_slice(e)
        out[..., sl] = np.gradient(f[..., sl], x, axis=-1, edge_order=2)
    return out


def graph_summary(g: MetricGraph) -> dict:
    return {
        "vertices": list(g.vertices),
        "edges": [
            {"name": e.name, "from": e.start, "to": e.end, "length": "external" if e.external else e.length}
            for e in g.edges
        ],
    }
