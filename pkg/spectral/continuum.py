"""Continuum-limit fields of an embedded graph.

R(v) = Σ_{w~v} |r_vw| r̂_vw r̂_vwᵀ, tr R(v) = Σ |r_vw|, the vertex density μ
(empirical or inverse dual-cell volume) and the homogenized constants r₀, μ⁰.
"""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import SphericalVoronoi, Voronoi
from shapely.geometry import MultiPoint, Point, box

from core.errors import InvalidSpec, TilingGap, UnboundedCell
from core.graph import MetricGraph
from core.models import ContinuumField, HomogeneityReport

logger = logging.getLogger(__name__)

DENSITY_MODES = ("empirical", "dual_cell")
DISC_SEGMENTS = 4096  # per quarter circle
GEOMETRY_TOL = 1e-9
# relative mismatch allowed between the summed dual cells and |Ω|; the disc
# polygon alone is off by about 2e-8
TILING_TOL = 1e-6


# ----------------------------------------------------------------------------
# R tensor
# ----------------------------------------------------------------------------
def r_tensors(graph: MetricGraph) -> np.ndarray:
    """(|V|, n, n) ambient R tensors for every vertex."""
    disp = graph.displacements()
    norms = np.linalg.norm(disp, axis=1)
    outer = disp[:, :, None] * disp[:, None, :] / norms[:, None, None]
    dim = graph.embedding_dim
    R = np.zeros((graph.n_vertices, dim, dim))
    np.add.at(R, graph.tails, outer)
    np.add.at(R, graph.heads, outer)
    return R


def r_tensor(graph: MetricGraph, v: int) -> np.ndarray:
    out = np.zeros((graph.embedding_dim, graph.embedding_dim))
    positions = graph.positions
    period = graph.period
    for w, _ in graph.adjacency[v]:
        r = positions[w] - positions[v]
        if period is not None:
            r = r - period * np.round(r / period)
        out += np.outer(r, r) / np.linalg.norm(r)
    return out


def is_sphere_graph(graph: MetricGraph) -> bool:
    return graph.domain.get("kind") == "sphere"


def manifold_dimension(graph: MetricGraph) -> int:
    return graph.embedding_dim - 1 if is_sphere_graph(graph) else graph.embedding_dim


def unit_normals(graph: MetricGraph) -> np.ndarray:
    p = graph.positions
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def tangent_projectors(graph: MetricGraph) -> np.ndarray:
    """P = I - n nᵀ per vertex of a sphere graph."""
    n = unit_normals(graph)
    return np.eye(graph.embedding_dim)[None, :, :] - n[:, :, None] * n[:, None, :]


def tangent_part(R: np.ndarray, normals: np.ndarray) -> np.ndarray:
    P = np.eye(R.shape[-1])[None] - normals[:, :, None] * normals[:, None, :]
    return P @ R @ P


def metric_estimate(graph: MetricGraph, v: int) -> np.ndarray:
    """(d/deg v) Σ r̂ r̂ᵀ, the inverse-metric estimate (tangent part on spheres)."""
    d = manifold_dimension(graph)
    positions = graph.positions
    period = graph.period
    acc = np.zeros((graph.embedding_dim, graph.embedding_dim))
    for w, _ in graph.adjacency[v]:
        r = positions[w] - positions[v]
        if period is not None:
            r = r - period * np.round(r / period)
        r_hat = r / np.linalg.norm(r)
        acc += np.outer(r_hat, r_hat)
    est = d / graph.degrees[v] * acc
    if is_sphere_graph(graph):
        n = positions[v] / np.linalg.norm(positions[v])
        P = np.eye(graph.embedding_dim) - np.outer(n, n)
        est = P @ est @ P
    return est


# ----------------------------------------------------------------------------
# domain and dual cells
# ----------------------------------------------------------------------------
def omega_volume(graph: MetricGraph) -> float:
    domain = graph.domain
    kind = domain.get("kind")
    if kind in ("box", "interval"):
        bounds = np.asarray(domain["bounds"], dtype=float)
        return float(np.prod(bounds[:, 1] - bounds[:, 0]))
    if kind == "disc":
        return float(np.pi * domain["radius"] ** 2)
    if kind == "sphere":
        return float(4.0 * np.pi * domain["radius"] ** 2)
    if kind == "torus":
        return float(np.prod(domain["period"]))
    raise UnboundedCell(f"graph {graph.name!r} has no ambient region (domain {kind!r})")


def interior_mask(graph: MetricGraph) -> np.ndarray:
    """Vertices off the boundary of Ω and not flagged as boundary."""
    mask = ~graph.boundary_mask
    domain = graph.domain
    kind = domain.get("kind")
    p = graph.positions
    if kind in ("box", "interval"):
        bounds = np.asarray(domain["bounds"], dtype=float)
        on_edge = np.any((np.abs(p - bounds[:, 0]) < GEOMETRY_TOL) | (np.abs(p - bounds[:, 1]) < GEOMETRY_TOL), axis=1)
        mask &= ~on_edge
    elif kind == "disc":
        mask &= np.linalg.norm(p, axis=1) < domain["radius"] - GEOMETRY_TOL
    return mask


def _interval_cells(graph: MetricGraph) -> np.ndarray:
    lo, hi = np.asarray(graph.domain["bounds"], dtype=float)[0]
    x = graph.positions[:, 0]
    order = np.argsort(x)
    xs = x[order]
    edges = np.concatenate([[lo], 0.5 * (xs[1:] + xs[:-1]), [hi]])
    cells = np.empty_like(x)
    cells[order] = np.clip(np.diff(edges), 0.0, None)
    return cells


def _planar_cells(points: np.ndarray, region) -> np.ndarray:
    """Voronoi cells of ``points`` clipped to the shapely ``region``."""
    minx, miny, maxx, maxy = region.bounds
    span = max(maxx - minx, maxy - miny)
    cx, cy = 0.5 * (minx + maxx), 0.5 * (miny + maxy)
    far = 10.0 * span
    dummies = np.array([[cx - far, cy - far], [cx + far, cy - far], [cx + far, cy + far], [cx - far, cy + far]])
    vor = Voronoi(np.vstack([points, dummies]))
    areas = np.empty(len(points))
    for i in range(len(points)):
        region_ids = vor.regions[vor.point_region[i]]
        if not region_ids or -1 in region_ids:
            raise UnboundedCell("unbounded Voronoi cell", vertex=i)
        cell = MultiPoint([tuple(vor.vertices[j]) for j in region_ids]).convex_hull
        areas[i] = cell.intersection(region).area
    return areas


def _torus_cells(graph: MetricGraph) -> np.ndarray:
    period = graph.period
    p = np.mod(graph.positions, period)
    n = len(p)
    shifts = [np.array([a, b]) * period for a in (-1, 0, 1) for b in (-1, 0, 1)]
    tiled = np.vstack([p + s for s in shifts])
    vor = Voronoi(tiled)
    centre = 4 * n  # shift (0, 0)
    areas = np.empty(n)
    for i in range(n):
        region_ids = vor.regions[vor.point_region[centre + i]]
        if not region_ids or -1 in region_ids:
            raise UnboundedCell("unbounded Voronoi cell on torus", vertex=i)
        areas[i] = MultiPoint([tuple(vor.vertices[j]) for j in region_ids]).convex_hull.area
    return areas


def dual_cell_volumes(graph: MetricGraph) -> np.ndarray:
    """Volume of each vertex's Voronoi cell inside Ω."""
    domain = graph.domain
    kind = domain.get("kind")
    if kind == "interval":
        cells = _interval_cells(graph)
    elif kind == "box":
        bounds = np.asarray(domain["bounds"], dtype=float)
        cells = _planar_cells(graph.positions, box(bounds[0, 0], bounds[1, 0], bounds[0, 1], bounds[1, 1]))
    elif kind == "disc":
        cells = _planar_cells(graph.positions, Point(0.0, 0.0).buffer(float(domain["radius"]), DISC_SEGMENTS))
    elif kind == "torus":
        cells = _torus_cells(graph)
    elif kind == "sphere":
        radius = float(domain["radius"])
        sv = SphericalVoronoi(graph.positions / radius, radius=1.0)
        cells = sv.calculate_areas() * radius ** 2
    else:
        raise UnboundedCell(f"dual cells need an ambient region, graph domain is {kind!r}")
    empty = np.flatnonzero(~(cells > 0))
    if empty.size:
        raise UnboundedCell("empty dual cell", vertex=int(empty[0]))
    total = float(cells.sum())
    volume = omega_volume(graph)
    logger.debug("dual cells of %s: total %.12g vs |Ω| %.12g", graph.name, total, volume)
    if abs(total - volume) > TILING_TOL * volume:
        raise TilingGap(total, volume)
    return cells


def vertex_density(graph: MetricGraph, mode: str = "dual_cell") -> np.ndarray:
    if mode == "dual_cell":
        return 1.0 / dual_cell_volumes(graph)
    if mode == "empirical":
        # unit point masses: Σ_v g(v) ≈ ∫ μ g dx
        return np.ones(graph.n_vertices)
    raise InvalidSpec(f"unknown density mode {mode!r}")


# ----------------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------------
def homogenized_constants(graph: MetricGraph, field: Optional[ContinuumField] = None) -> Tuple[float, float]:
    """r₀ = mean_v tr R(v)/deg(v) and μ⁰ = |V|/|Ω|."""
    trR = field.trR if field is not None else np.trace(r_tensors(graph), axis1=1, axis2=2)
    r0 = float(np.mean(trR / graph.degrees))
    mu0 = graph.n_vertices / omega_volume(graph)
    return r0, mu0


def continuum_field(graph: MetricGraph, density: str = "dual_cell") -> ContinuumField:
    R = r_tensors(graph)
    trR = np.trace(R, axis1=1, axis2=2)
    mu = vertex_density(graph, density)
    r0, mu0 = homogenized_constants(graph)
    normals = unit_normals(graph) if is_sphere_graph(graph) else None
    return ContinuumField(
        R=R, trR=trR, mu=mu, r0=r0, mu0=mu0,
        omega_volume=omega_volume(graph),
        interior=interior_mask(graph),
        manifold_dim=manifold_dimension(graph),
        density_mode=density,
        normals=normals,
    )


def homogeneity_report(field: ContinuumField) -> HomogeneityReport:
    """Spread of R over interior vertices and its distance from (tr R/d) I."""
    mask = field.interior
    R = field.R[mask]
    if R.shape[0] == 0:
        raise InvalidSpec("no interior vertices to assess")
    if field.normals is not None:
        # sorted tangent eigenvalues; the normal direction carries ~0
        ev = np.linalg.eigvalsh(tangent_part(R, field.normals[mask]))[:, -field.manifold_dim:]
        homogeneity = float(np.max(np.ptp(ev, axis=0)))
        isotropy = float(np.max(np.abs(ev - ev.mean(axis=1, keepdims=True))))
    else:
        homogeneity = float(np.max(np.ptp(R, axis=0)))
        d = field.manifold_dim
        iso = np.trace(R, axis1=1, axis2=2)[:, None, None] / d * np.eye(d)[None]
        isotropy = float(np.max(np.abs(R - iso)))
    scale = float(np.mean(field.trR[mask]))
    return HomogeneityReport(homogeneity, isotropy, homogeneity / scale, isotropy / scale, int(mask.sum()))


# ----------------------------------------------------------------------------
# spider webs in polar coordinates
# ----------------------------------------------------------------------------
def spider_polar_tensor(r: float, dr: float, dtheta: float) -> np.ndarray:
    """Closed-form R of a ring vertex in the (r̂, θ̂) basis."""
    half = 0.5 * dtheta
    return np.diag([2.0 * dr + 4.0 * r * np.sin(half) ** 3, r * np.sin(dtheta) ** 2 / np.sin(half)])


def polar_components(graph: MetricGraph, R: Optional[np.ndarray] = None) -> np.ndarray:
    """R rotated into the local (r̂, θ̂) frame of each planar vertex (NaN at the origin)."""
    if graph.embedding_dim != 2:
        raise InvalidSpec("polar components need a planar embedding")
    R = r_tensors(graph) if R is None else R
    theta = np.arctan2(graph.positions[:, 1], graph.positions[:, 0])
    c, s = np.cos(theta), np.sin(theta)
    Q = np.stack([np.stack([c, s], axis=1), np.stack([-s, c], axis=1)], axis=1)
    out = Q @ R @ np.transpose(Q, (0, 2, 1))
    at_origin = np.linalg.norm(graph.positions, axis=1) < GEOMETRY_TOL
    out[at_origin] = np.nan
    return out


def field_to_dict(field: ContinuumField) -> dict:
    """Per-vertex upper-triangle R, tr R and μ plus the scalar constants."""
    n = field.R.shape[-1]
    iu = np.triu_indices(n)
    return {
        "r0": field.r0,
        "mu0": field.mu0,
        "omega_volume": field.omega_volume,
        "manifold_dim": field.manifold_dim,
        "density_mode": field.density_mode,
        "R_upper": field.R[:, iu[0], iu[1]].tolist(),
        "trR": field.trR.tolist(),
        "mu": field.mu.tolist(),
        "interior": field.interior.tolist(),
    }
