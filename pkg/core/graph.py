"""Embedded metric graphs.

A :class:`MetricGraph` is immutable after construction.  Edges are straight
chords between embedded vertices, each carrying its own length and an
orientation (tail sits at local coordinate 0, head at ``length``).

Functions on the graph are passed around as *edge functions*: callables
``f(edge_ids, x)`` taking an integer array of edge ids and a float array of
local coordinates (broadcastable to each other) and returning values of the
same shape.  Everything here is vectorised over edges.
"""
from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from core.errors import InvalidSpec, IoError, OutOfRange, PoleOnEdge
from core.models import Edge, EigenMode, Vertex

logger = logging.getLogger(__name__)

POLE_TOL = 1e-10
DEFAULT_QUAD_ORDER = 16
LENGTH_TOL = 1e-12

EdgeFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class MetricGraph:
    def __init__(
        self,
        vertices: Sequence[Vertex],
        edges: Sequence[Edge],
        embedding_dim: Optional[int] = None,
        *,
        domain: Optional[Dict[str, Any]] = None,
        allow_disconnected: bool = False,
        name: str = "",
    ):
        self.vertices: Tuple[Vertex, ...] = tuple(vertices)
        self.edges: Tuple[Edge, ...] = tuple(edges)
        self.domain: Dict[str, Any] = dict(domain or {"kind": "none"})
        self.name = name

        if not self.vertices:
            raise InvalidSpec("graph has no vertices")
        positions = np.array([np.asarray(v.position, dtype=float) for v in self.vertices])
        if positions.ndim != 2:
            raise InvalidSpec("vertex positions must share one dimension")
        self.embedding_dim = int(embedding_dim or positions.shape[1])
        if positions.shape[1] != self.embedding_dim:
            raise InvalidSpec(
                f"positions have dimension {positions.shape[1]}, graph declares {self.embedding_dim}"
            )
        ids = [v.id for v in self.vertices]
        if ids != list(range(len(ids))):
            raise InvalidSpec("vertex ids must be contiguous from 0 and in order")

        self._positions = positions
        self._positions.setflags(write=False)
        self._boundary = np.array([bool(v.boundary) for v in self.vertices])
        self._tails = np.array([e.tail for e in self.edges], dtype=np.int64)
        self._heads = np.array([e.head for e in self.edges], dtype=np.int64)
        self._lengths = np.array([e.length for e in self.edges], dtype=float)
        for arr in (self._boundary, self._tails, self._heads, self._lengths):
            arr.setflags(write=False)

        self._validate_edges()

        adjacency: List[List[Tuple[int, int]]] = [[] for _ in self.vertices]
        for e, (t, h) in enumerate(zip(self._tails, self._heads)):
            adjacency[t].append((int(h), e))
            adjacency[h].append((int(t), e))
        self.adjacency: Tuple[Tuple[Tuple[int, int], ...], ...] = tuple(tuple(a) for a in adjacency)
        self._degrees = np.array([len(a) for a in adjacency], dtype=np.int64)
        if np.any(self._degrees == 0):
            lonely = np.flatnonzero(self._degrees == 0)[:10].tolist()
            raise InvalidSpec(f"isolated vertices {lonely}")

        self.n_components = self._count_components()
        self.connected = self.n_components == 1
        if not self.connected and not allow_disconnected:
            raise InvalidSpec(f"graph has {self.n_components} components")

    # ------------------------------------------------------------------
    def _validate_edges(self) -> None:
        n = len(self.vertices)
        if len(self.edges) == 0:
            raise InvalidSpec("graph has no edges")
        if np.any(self._tails < 0) or np.any(self._heads < 0) or np.any(self._tails >= n) or np.any(self._heads >= n):
            raise InvalidSpec("edge endpoint outside vertex range")
        loops = np.flatnonzero(self._tails == self._heads)
        if loops.size:
            raise InvalidSpec(f"self-loops on edges {loops[:10].tolist()}")
        bad = np.flatnonzero(~(self._lengths > 0))
        if bad.size:
            raise InvalidSpec(f"non-positive lengths on edges {bad[:10].tolist()}")
        pairs = np.sort(np.stack([self._tails, self._heads], axis=1), axis=1)
        if np.unique(pairs, axis=0).shape[0] != pairs.shape[0]:
            raise InvalidSpec("parallel edges are not supported")

    def _count_components(self) -> int:
        n = len(self.vertices)
        adj = sparse.coo_matrix(
            (np.ones(len(self.edges)), (self._tails, self._heads)), shape=(n, n)
        )
        count, _ = connected_components(adj, directed=False)
        return int(count)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def boundary_mask(self) -> np.ndarray:
        return self._boundary

    @property
    def tails(self) -> np.ndarray:
        return self._tails

    @property
    def heads(self) -> np.ndarray:
        return self._heads

    @property
    def lengths(self) -> np.ndarray:
        return self._lengths

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    @property
    def total_length(self) -> float:
        return float(self._lengths.sum())

    @property
    def period(self) -> Optional[np.ndarray]:
        if self.domain.get("kind") == "torus":
            return np.asarray(self.domain["period"], dtype=float)
        return None

    def displacements(self) -> np.ndarray:
        """r_e = position(head) - position(tail), minimum image on tori."""
        disp = self._positions[self._heads] - self._positions[self._tails]
        period = self.period
        if period is not None:
            disp = disp - period * np.round(disp / period)
        return disp

    def edge_points(self, edge_ids: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Embedded points at local coordinate x along straight edges."""
        edge_ids = np.asarray(edge_ids)
        x = np.asarray(x, dtype=float)
        edge_ids, x = np.broadcast_arrays(edge_ids, x)
        frac = x / self._lengths[edge_ids]
        disp = self.displacements()[edge_ids]
        return self._positions[self._tails[edge_ids]] + frac[..., None] * disp

    def is_equilateral(self, rtol: float = 1e-12) -> bool:
        return bool(np.ptp(self._lengths) <= rtol * self._lengths.max())

    # ------------------------------------------------------------------
    def reversed(self, edge_ids: Optional[Iterable[int]] = None) -> "MetricGraph":
        """Copy with tail/head swapped on the given edges (all by default)."""
        flip = set(range(self.n_edges) if edge_ids is None else (int(e) for e in edge_ids))
        edges = [
            Edge(e.head, e.tail, e.length) if i in flip else Edge(e.tail, e.head, e.length)
            for i, e in enumerate(self.edges)
        ]
        return MetricGraph(self.vertices, edges, self.embedding_dim, domain=self.domain,
                           allow_disconnected=not self.connected, name=self.name)

    def scaled(self, c: float) -> "MetricGraph":
        """Copy with positions, lengths and the domain scaled by c."""
        vertices = [Vertex(v.id, c * np.asarray(v.position), v.boundary) for v in self.vertices]
        edges = [Edge(e.tail, e.head, c * e.length) for e in self.edges]
        domain = dict(self.domain)
        if "bounds" in domain:
            domain["bounds"] = (c * np.asarray(domain["bounds"], dtype=float)).tolist()
        if "radius" in domain:
            domain["radius"] = c * float(domain["radius"])
        if "period" in domain:
            domain["period"] = (c * np.asarray(domain["period"], dtype=float)).tolist()
        return MetricGraph(vertices, edges, self.embedding_dim, domain=domain,
                           allow_disconnected=not self.connected, name=self.name)

    def __repr__(self) -> str:
        return (f"MetricGraph(name={self.name!r}, |V|={self.n_vertices}, |E|={self.n_edges}, "
                f"dim={self.embedding_dim}, domain={self.domain.get('kind')})")


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------
def graph_to_dict(graph: MetricGraph) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "dim": graph.embedding_dim,
        "vertices": [
            {"id": v.id, "pos": [float(c) for c in v.position], "boundary": bool(v.boundary)}
            for v in graph.vertices
        ],
        "edges": [
            {"tail": int(e.tail), "head": int(e.head), "length": float(e.length)}
            for e in graph.edges
        ],
    }
    if graph.domain.get("kind", "none") != "none":
        data["domain"] = graph.domain
    if graph.name:
        data["name"] = graph.name
    if not graph.connected:
        data["connected"] = False
    return data


def graph_from_dict(data: Dict[str, Any]) -> MetricGraph:
    try:
        dim = int(data["dim"])
        vertices = [
            Vertex(int(v["id"]), np.asarray(v["pos"], dtype=float), bool(v.get("boundary", False)))
            for v in data["vertices"]
        ]
        raw_edges = data["edges"]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidSpec(f"malformed graph data: {e}") from e

    vertices.sort(key=lambda v: v.id)
    domain = data.get("domain")
    period = None
    if domain and domain.get("kind") == "torus":
        period = np.asarray(domain["period"], dtype=float)

    edges = []
    for item in raw_edges:
        tail, head = int(item["tail"]), int(item["head"])
        length = item.get("length")
        if length is None:
            disp = vertices[head].position - vertices[tail].position
            if period is not None:
                disp = disp - period * np.round(disp / period)
            length = float(np.linalg.norm(disp))
        edges.append(Edge(tail, head, float(length)))

    return MetricGraph(
        vertices, edges, dim, domain=domain,
        allow_disconnected=not data.get("connected", True),
        name=data.get("name", ""),
    )


def save_graph(graph: MetricGraph, path: Union[str, Path]) -> None:
    try:
        Path(path).write_bytes(orjson.dumps(graph_to_dict(graph), option=orjson.OPT_INDENT_2))
    except OSError as e:
        raise IoError(f"cannot write graph file {path}: {e}") from e


def load_graph(path: Union[str, Path]) -> MetricGraph:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read graph file {path}: {e}") from e
    try:
        data = orjson.loads(raw)
    except orjson.JSONDecodeError as e:
        raise IoError(f"graph file {path} is not valid JSON: {e}") from e
    return graph_from_dict(data)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------
@lru_cache(maxsize=32)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    if order < 1:
        raise InvalidSpec(f"quadrature order must be >= 1, got {order}")
    t, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = 0.5 * (t + 1.0), 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def quadrature_grid(graph: MetricGraph, quad_order: int = DEFAULT_QUAD_ORDER):
    """(edge_ids, x, w) arrays of shape (|E|, q) covering every edge."""
    nodes, weights = gauss_legendre(quad_order)
    lengths = graph.lengths[:, None]
    edge_ids = np.broadcast_to(np.arange(graph.n_edges)[:, None], (graph.n_edges, quad_order))
    return edge_ids, lengths * nodes[None, :], lengths * weights[None, :]


def constant_function(value: float = 1.0) -> EdgeFunction:
    def f(edge_ids, x):
        return np.full(np.broadcast(edge_ids, x).shape, float(value))
    return f


def graph_inner_product(graph: MetricGraph, f: EdgeFunction, g: EdgeFunction,
                        quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Sum over edges of the L2 inner product, by Gauss-Legendre per edge."""
    edge_ids, x, w = quadrature_grid(graph, quad_order)
    return float(np.sum(w * f(edge_ids, x) * g(edge_ids, x)))


def graph_norm(graph: MetricGraph, f: EdgeFunction, quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    return float(np.sqrt(max(graph_inner_product(graph, f, f, quad_order), 0.0)))


# ---------------------------------------------------------------------------
# edgewise closed form
# ---------------------------------------------------------------------------
def _edge_sines(graph: MetricGraph, k: float, pole_tol: float) -> np.ndarray:
    s = np.sin(k * graph.lengths)
    bad = np.flatnonzero(np.abs(s) < pole_tol)
    if bad.size:
        raise PoleOnEdge(k, int(bad[0]))
    return s


def eigenfunction_on_edges(graph: MetricGraph, k: float, f_V: np.ndarray,
                           pole_tol: float = POLE_TOL) -> EdgeFunction:
    """Vectorised closed form f(x) = f(v) sin(k(l-x))/sin(kl) + f(w) sin(kx)/sin(kl)."""
    if k <= 0:
        raise OutOfRange(f"closed form needs k > 0, got {k}")
    f_V = np.asarray(f_V, dtype=float)
    s = _edge_sines(graph, k, pole_tol)
    ft, fh = f_V[graph.tails], f_V[graph.heads]
    lengths = graph.lengths

    def f(edge_ids, x):
        edge_ids = np.asarray(edge_ids)
        ell = lengths[edge_ids]
        return (ft[edge_ids] * np.sin(k * (ell - x)) + fh[edge_ids] * np.sin(k * x)) / s[edge_ids]

    return f


def edge_eigenfunction(graph: MetricGraph, mode: EigenMode, edge: int, x: float,
                       pole_tol: float = POLE_TOL) -> float:
    ell = graph.lengths[edge]
    if not 0.0 <= x <= ell:
        raise OutOfRange(f"x={x} outside [0, {ell}] on edge {edge}")
    if mode.k <= 0:
        raise OutOfRange(f"closed form needs k > 0, got {mode.k}")
    s = np.sin(mode.k * ell)
    if abs(s) < pole_tol:
        raise PoleOnEdge(mode.k, edge)
    tail_value = float(mode.f_V[graph.tails[edge]])
    head_value = float(mode.f_V[graph.heads[edge]])
    # exact at the endpoints
    if x == 0.0:
        return tail_value
    if x == ell:
        return head_value
    return (tail_value * np.sin(mode.k * (ell - x)) + head_value * np.sin(mode.k * x)) / s


def edge_mass_matrix(graph: MetricGraph, k: float, quad_order: int = DEFAULT_QUAD_ORDER,
                     pole_tol: float = POLE_TOL) -> sparse.csr_matrix:
    """M(k) with ||f||_G^2 = f_V^T M f_V for the closed form at k."""
    s = _edge_sines(graph, k, pole_tol)
    _, x, w = quadrature_grid(graph, quad_order)
    ell = graph.lengths[:, None]
    phi_t = np.sin(k * (ell - x)) / s[:, None]
    phi_h = np.sin(k * x) / s[:, None]
    tt = np.sum(w * phi_t * phi_t, axis=1)
    th = np.sum(w * phi_t * phi_h, axis=1)
    hh = np.sum(w * phi_h * phi_h, axis=1)
    t, h = graph.tails, graph.heads
    rows = np.concatenate([t, h, t, h])
    cols = np.concatenate([t, h, h, t])
    vals = np.concatenate([tt, hh, th, th])
    n = graph.n_vertices
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def outward_derivative_sums(graph: MetricGraph, k: float, f_V: np.ndarray,
                            pole_tol: float = POLE_TOL) -> np.ndarray:
    """Per-vertex sum of outgoing edge derivatives D_e f(v) = k[csc f(w) - cot f(v)]."""
    s = _edge_sines(graph, k, pole_tol)
    c = np.cos(k * graph.lengths)
    ft, fh = f_V[graph.tails], f_V[graph.heads]
    at_tail = k * (fh - c * ft) / s
    at_head = k * (ft - c * fh) / s
    sums = np.zeros(graph.n_vertices)
    np.add.at(sums, graph.tails, at_tail)
    np.add.at(sums, graph.heads, at_head)
    return sums


def kirchhoff_residual(graph: MetricGraph, mode: EigenMode, boundary: str = "clamped",
                       pole_tol: float = POLE_TOL) -> float:
    """max over interior vertices of |sum_e D_e f(v)|.

    Interior means every vertex for free boundaries and the non-boundary ones
    for clamped boundaries.
    """
    sums = outward_derivative_sums(graph, mode.k, np.asarray(mode.f_V, dtype=float), pole_tol)
    mask = np.ones(graph.n_vertices, dtype=bool) if boundary == "free" else ~graph.boundary_mask
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(sums[mask])))
