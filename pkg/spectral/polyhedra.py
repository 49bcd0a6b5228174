"""Face meshes on the unit sphere and the Conway dual / truncate operators.

Internal scaffold for :func:`spectral.builders.build_polyhedron`; only the
1-skeleton leaves this module as a MetricGraph.  Faces are stored as vertex
index tuples ordered counter-clockwise when seen from outside the sphere.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from core.errors import InvalidSpec

logger = logging.getLogger(__name__)

TRUNCATION_DEPTH = 1.0 / 3.0
GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(slots=True)
class FaceMesh:
    vertices: np.ndarray  # (n, 3)
    faces: List[Tuple[int, ...]] = field(default_factory=list)

    def edges(self) -> np.ndarray:
        pairs = set()
        for face in self.faces:
            for a, b in zip(face, face[1:] + face[:1]):
                pairs.add((min(a, b), max(a, b)))
        return np.array(sorted(pairs), dtype=np.int64)

    @property
    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges()) + len(self.faces)

    def face_histogram(self) -> Dict[int, int]:
        return dict(sorted(Counter(len(f) for f in self.faces).items()))

    def vertex_faces(self) -> List[List[int]]:
        incident: List[List[int]] = [[] for _ in range(len(self.vertices))]
        for fi, face in enumerate(self.faces):
            for v in face:
                incident[v].append(fi)
        return incident

    def neighbors(self) -> List[List[int]]:
        adj: List[set] = [set() for _ in range(len(self.vertices))]
        for a, b in self.edges():
            adj[a].add(int(b))
            adj[b].add(int(a))
        return [sorted(s) for s in adj]


# ----------------------------------------------------------------------------
# geometry helpers
# ----------------------------------------------------------------------------
def _project(points: np.ndarray) -> np.ndarray:
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def _tangent_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def _ccw_order(center: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Argsort of ``points`` by angle around ``center`` seen from outside."""
    e1, e2 = _tangent_basis(center)
    rel = points - center
    return np.argsort(np.arctan2(rel @ e2, rel @ e1))


# ----------------------------------------------------------------------------
# seed + operators
# ----------------------------------------------------------------------------
def icosahedron() -> FaceMesh:
    raw = []
    for a in (-1.0, 1.0):
        for b in (-GOLDEN, GOLDEN):
            raw += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    points = _project(np.array(raw))
    faces = []
    for simplex in ConvexHull(points).simplices:
        a, b, c = (int(i) for i in simplex)
        normal = np.cross(points[b] - points[a], points[c] - points[a])
        if normal @ (points[a] + points[b] + points[c]) < 0:
            b, c = c, b
        faces.append((a, b, c))
    return FaceMesh(points, faces)


def dual(mesh: FaceMesh, project: bool = True) -> FaceMesh:
    """Faces become vertices (at centroids), vertices become faces."""
    centroids = np.array([mesh.vertices[list(f)].mean(axis=0) for f in mesh.faces])
    if project:
        centroids = _project(centroids)
    faces = []
    for v, incident in enumerate(mesh.vertex_faces()):
        incident = np.asarray(incident)
        order = _ccw_order(mesh.vertices[v], centroids[incident])
        faces.append(tuple(int(i) for i in incident[order]))
    return FaceMesh(centroids, faces)


def truncate(mesh: FaceMesh, depth: float = TRUNCATION_DEPTH, project: bool = True) -> FaceMesh:
    """Cut every vertex at ``depth`` of each incident edge."""
    index: Dict[Tuple[int, int], int] = {}
    points = []

    def cut(v: int, w: int) -> int:
        key = (v, w)
        if key not in index:
            index[key] = len(points)
            points.append(mesh.vertices[v] + depth * (mesh.vertices[w] - mesh.vertices[v]))
        return index[key]

    faces = []
    for face in mesh.faces:
        ring = []
        for a, b in zip(face, face[1:] + face[:1]):
            ring += [cut(a, b), cut(b, a)]
        faces.append(tuple(ring))

    for v, nbrs in enumerate(mesh.neighbors()):
        nbrs = np.asarray(nbrs)
        order = _ccw_order(mesh.vertices[v], mesh.vertices[nbrs])
        faces.append(tuple(cut(v, int(w)) for w in nbrs[order]))

    new_points = np.array(points)
    if project:
        new_points = _project(new_points)
    return FaceMesh(new_points, faces)


OPERATORS = {"dual": dual, "truncate": truncate}


def apply_ops(ops: Tuple[str, ...], project_each_step: bool = True) -> FaceMesh:
    mesh = icosahedron()
    for step, op in enumerate(ops, start=1):
        mesh = OPERATORS[op](mesh, project=project_each_step)
        chi = mesh.euler_characteristic
        if chi != 2:
            raise InvalidSpec(f"Euler characteristic {chi} after step {step} ({op})")
        logger.debug("conway %s -> |V|=%d faces=%s", op, len(mesh.vertices), mesh.face_histogram())
    if not project_each_step:
        mesh = FaceMesh(_project(mesh.vertices), mesh.faces)
    return mesh


def mesh_audit(mesh: FaceMesh, length_tol: float = 1e-9) -> Dict[str, object]:
    """Combinatorial and metric summary of a sphere mesh."""
    edges = mesh.edges()
    lengths = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    classes: List[float] = []
    for value in np.sort(lengths):
        if not classes or value - classes[-1] > length_tol:
            classes.append(float(value))
    return {
        "n_vertices": len(mesh.vertices),
        "n_edges": len(edges),
        "n_faces": len(mesh.faces),
        "euler": mesh.euler_characteristic,
        "face_sizes": mesh.face_histogram(),
        "length_classes": classes,
        "max_norm_error": float(np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0))),
    }
