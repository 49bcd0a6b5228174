"""Graph families: lattices on the unit square and torus, spider webs on the
unit disc, Goldberg polyhedra on the unit sphere, and the subdivided interval.
"""
from __future__ import annotations

import logging
from typing import Any, Dict, List, Tuple

import numpy as np

from core.errors import DegenerateRings, InvalidSpec
from core.graph import MetricGraph
from core.models import Edge, LatticeSpec, PolyhedronSpec, SpiderSpec, Vertex
from spectral.polyhedra import FaceMesh, apply_ops

logger = logging.getLogger(__name__)

MAX_RINGS = 100_000


def _edges_from_pairs(positions: np.ndarray, pairs: List[Tuple[int, int]],
                      period: np.ndarray | None = None) -> List[Edge]:
    pairs_arr = np.asarray(pairs, dtype=np.int64)
    disp = positions[pairs_arr[:, 1]] - positions[pairs_arr[:, 0]]
    if period is not None:
        disp = disp - period * np.round(disp / period)
    lengths = np.linalg.norm(disp, axis=1)
    return [Edge(int(t), int(h), float(ell)) for (t, h), ell in zip(pairs_arr, lengths)]


# ----------------------------------------------------------------------------
# lattices
# ----------------------------------------------------------------------------
def build_lattice(spec: LatticeSpec) -> MetricGraph:
    spec.validate()
    lx, ly = spec.resolved_spacing()
    nx, ny = spec.nx, spec.ny
    periodic = spec.boundary == "periodic"

    def vid(i: int, j: int) -> int:
        return (j % ny) * nx + (i % nx)

    vertices = []
    for j in range(ny):
        for i in range(nx):
            on_edge = i in (0, nx - 1) or j in (0, ny - 1)
            vertices.append(Vertex(vid(i, j), np.array([i * lx, j * ly]),
                                   boundary=spec.boundary == "clamped" and on_edge))
    positions = np.array([v.position for v in vertices])

    imax = nx if periodic else nx - 1
    jmax = ny if periodic else ny - 1
    pairs: List[Tuple[int, int]] = []
    if spec.connectivity in ("cardinal", "both"):
        for j in range(ny):
            for i in range(imax):
                pairs.append((vid(i, j), vid(i + 1, j)))
        for j in range(jmax):
            for i in range(nx):
                pairs.append((vid(i, j), vid(i, j + 1)))
    if spec.connectivity in ("ordinal", "both"):
        for j in range(jmax):
            for i in range(imax):
                pairs.append((vid(i, j), vid(i + 1, j + 1)))
                pairs.append((vid(i + 1, j), vid(i, j + 1)))

    if periodic:
        period = np.array([nx * lx, ny * ly])
        domain: Dict[str, Any] = {"kind": "torus", "period": period.tolist()}
    else:
        period = None
        domain = {"kind": "box", "bounds": [[0.0, (nx - 1) * lx], [0.0, (ny - 1) * ly]]}

    edges = _edges_from_pairs(positions, pairs, period)
    name = f"lattice-{spec.connectivity}-{spec.boundary}-{nx}x{ny}"
    graph = MetricGraph(vertices, edges, 2, domain=domain,
                        allow_disconnected=spec.connectivity == "ordinal", name=name)
    logger.debug("built %r", graph)
    return graph


def square_lattice(n: int, boundary: str = "clamped", connectivity: str = "cardinal") -> MetricGraph:
    return build_lattice(LatticeSpec(n, n, boundary=boundary, connectivity=connectivity))


def rect_lattice(nx: int, r: Tuple[float, float] = (1.0 / 3.0, 2.0 / 3.0),
                 boundary: str = "clamped") -> MetricGraph:
    """Clamped lattice on the unit square with R proportional to diag(r1, r2).

    ℓy/ℓx = r2/r1, so ny follows from nx (rounded to the nearest grid that
    still spans the unit square).
    """
    if min(r) <= 0:
        raise InvalidSpec(f"anisotropy ratios must be positive, got {r}")
    ny = int(round((nx - 1) * r[0] / r[1])) + 1
    if ny < 2:
        raise InvalidSpec(f"nx={nx} too small for r={r}")
    return build_lattice(LatticeSpec(nx, ny, boundary=boundary))


# ----------------------------------------------------------------------------
# spider webs
# ----------------------------------------------------------------------------
def _innermost_ring(spec: SpiderSpec) -> float:
    """Fixed point of r = rho(r) dθ, falling back to rho(1) dθ when it collapses to 0."""
    dtheta = spec.dtheta
    start = spec.rho(1.0) * dtheta
    r = start
    for _ in range(500):
        nxt = spec.rho(r) * dtheta
        if abs(nxt - r) < 1e-14:
            break
        r = nxt
    if r > 1e-6 and abs(spec.rho(r) * dtheta - r) < 1e-10:
        return float(r)
    # linear profiles have only the trivial fixed point
    return float(start)


def spider_radii(spec: SpiderSpec) -> np.ndarray:
    """Ring radii from integrating dr = rho(r) dθ outward, last ring at r = 1."""
    spec.validate()
    if spec.radii is not None:
        return np.asarray(spec.radii, dtype=float)

    dtheta = spec.dtheta
    r1 = spec.inner_radius if spec.inner_radius is not None else _innermost_ring(spec)
    if not 0 < r1 < 1:
        raise DegenerateRings(f"innermost ring r={r1} does not fit inside the unit disc")
    rings = [float(r1)]
    while True:
        r = rings[-1]
        step = spec.rho(r) * dtheta
        if step <= 0:
            raise InvalidSpec(f"radial profile is not positive at r={r}")
        if r + step < 1.0:
            rings.append(r + step)
            if len(rings) > MAX_RINGS:
                raise InvalidSpec("radial profile too small, ring count exploded")
            continue
        # snap: move a near-rim ring onto r = 1, otherwise add the rim
        if 1.0 - r < 0.5 * step and len(rings) > 1:
            rings[-1] = 1.0
        else:
            rings.append(1.0)
        break
    if len(rings) < 2:
        raise DegenerateRings("fewer than 2 rings fit inside the unit disc")
    return np.array(rings)


def build_spider(spec: SpiderSpec) -> MetricGraph:
    radii = spider_radii(spec)
    M = spec.M
    angles = np.arange(M) * spec.dtheta
    n_rings = len(radii)

    vertices = [Vertex(0, np.zeros(2))]
    for i, r in enumerate(radii):
        for j, theta in enumerate(angles):
            vertices.append(Vertex(1 + i * M + j, r * np.array([np.cos(theta), np.sin(theta)]),
                                   boundary=i == n_rings - 1))
    positions = np.array([v.position for v in vertices])

    pairs: List[Tuple[int, int]] = [(0, 1 + j) for j in range(M)]
    for i in range(n_rings):
        base = 1 + i * M
        pairs += [(base + j, base + (j + 1) % M) for j in range(M)]
        if i + 1 < n_rings:
            pairs += [(base + j, base + M + j) for j in range(M)]

    domain = {"kind": "disc", "radius": 1.0,
              "boundary_condition": "clamped" if spec.clamped else "free"}
    return MetricGraph(vertices, _edges_from_pairs(positions, pairs), 2, domain=domain,
                       name=f"spider-M{M}-rings{n_rings}")


# ----------------------------------------------------------------------------
# polyhedra
# ----------------------------------------------------------------------------
def polyhedron_mesh(spec: PolyhedronSpec) -> FaceMesh:
    spec.validate()
    return apply_ops(spec.normalized_ops(), spec.project_each_step)


def graph_from_mesh(mesh: FaceMesh, name: str = "") -> MetricGraph:
    vertices = [Vertex(i, p) for i, p in enumerate(mesh.vertices)]
    pairs = [tuple(int(x) for x in e) for e in mesh.edges()]
    return MetricGraph(vertices, _edges_from_pairs(mesh.vertices, pairs), 3,
                       domain={"kind": "sphere", "radius": 1.0}, name=name)


def build_polyhedron(spec: PolyhedronSpec) -> MetricGraph:
    mesh = polyhedron_mesh(spec)
    label = "".join(op[0] for op in spec.normalized_ops()) or "I"
    return graph_from_mesh(mesh, name=f"polyhedron-{label}")


def goldberg_ops(level: int) -> Tuple[str, ...]:
    """t, tdt, tdtdt, ...: the soccer ball and its Goldberg refinements."""
    if level < 1:
        raise InvalidSpec(f"Goldberg level must be >= 1, got {level}")
    return ("truncate",) + ("dual", "truncate") * (level - 1)


def goldberg_size(level: int) -> int:
    return 60 * 3 ** (level - 1)


# ----------------------------------------------------------------------------
# interval
# ----------------------------------------------------------------------------
def build_interval(n_vertices: int, clamped: bool = True) -> MetricGraph:
    """Path subdividing [0, 1] into n_vertices - 1 equal edges."""
    if n_vertices < 2:
        raise InvalidSpec(f"interval needs >= 2 vertices, got {n_vertices}")
    xs = np.linspace(0.0, 1.0, n_vertices)
    vertices = [Vertex(i, np.array([x]), boundary=clamped and i in (0, n_vertices - 1))
                for i, x in enumerate(xs)]
    pairs = [(i, i + 1) for i in range(n_vertices - 1)]
    return MetricGraph(vertices, _edges_from_pairs(xs[:, None], pairs), 1,
                       domain={"kind": "interval", "bounds": [[0.0, 1.0]]},
                       name=f"interval-{n_vertices}")


# ----------------------------------------------------------------------------
# registry used by the CLI and convergence sweeps
# ----------------------------------------------------------------------------
FAMILIES = ("square", "rect", "torus", "spider", "goldberg", "interval")


def build_family(family: str, **params: Any) -> MetricGraph:
    if family == "square":
        return square_lattice(int(params.get("n", 21)), params.get("boundary", "clamped"),
                              params.get("connectivity", "cardinal"))
    if family == "rect":
        r = tuple(params.get("r", (1.0 / 3.0, 2.0 / 3.0)))
        return rect_lattice(int(params.get("nx", 29)), r, params.get("boundary", "clamped"))
    if family == "torus":
        n = int(params.get("n", 16))
        return build_lattice(LatticeSpec(n, n, boundary="periodic",
                                         connectivity=params.get("connectivity", "cardinal")))
    if family == "spider":
        return build_spider(SpiderSpec(
            M=int(params.get("M", 32)),
            gamma=float(params.get("gamma", 1.0)),
            inner_radius=params.get("inner_radius"),
            clamped=params.get("boundary", "clamped") == "clamped",
        ))
    if family == "goldberg":
        ops = params.get("ops")
        if ops is None:
            ops = goldberg_ops(int(params.get("level", 1)))
        return build_polyhedron(PolyhedronSpec(ops=tuple(ops)))
    if family == "interval":
        return build_interval(int(params.get("n", 11)), params.get("boundary", "clamped") == "clamped")
    raise InvalidSpec(f"unknown graph family {family!r}")
