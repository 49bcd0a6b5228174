"""
Тесты континуального предела: тензор R, дуальные ячейки, плотность, однородность
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.append(str(Path(__file__).parent))

from core.errors import InvalidSpec, TilingGap, UnboundedCell
from core.graph import MetricGraph
from core.models import Edge, LatticeSpec, PolyhedronSpec, SpiderSpec, Vertex
from spectral.builders import build_interval, build_lattice, build_polyhedron, build_spider, square_lattice
from spectral.continuum import (continuum_field, dual_cell_volumes, field_to_dict, homogeneity_report,
                                homogenized_constants, interior_mask, metric_estimate, omega_volume,
                                polar_components, r_tensor, r_tensors, spider_polar_tensor, vertex_density)

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


def test_square_lattice_interior_tensor():
    graph = square_lattice(5)
    R = r_tensors(graph)
    interior = interior_mask(graph)
    assert int(interior.sum()) == 9
    for v in np.flatnonzero(interior):
        assert_allclose(R[v], 2 * 0.25 * np.eye(2), atol=1e-15)
        assert_allclose(r_tensor(graph, v), R[v], atol=1e-15)
        assert_allclose(metric_estimate(graph, v), np.eye(2), atol=1e-15)


def test_torus_tensor_uses_minimum_image():
    graph = build_lattice(LatticeSpec(4, 4, boundary="periodic"))
    R = r_tensors(graph)
    assert_allclose(R, np.broadcast_to(0.5 * np.eye(2), R.shape), atol=1e-15)
    assert_allclose(r_tensor(graph, 0), R[0], atol=1e-15)


def test_dual_cells_tile_the_domain():
    for graph in (square_lattice(6), build_interval(7), build_lattice(LatticeSpec(4, 4, boundary="periodic"))):
        cells = dual_cell_volumes(graph)
        assert np.all(cells > 0)
        assert cells.sum() == pytest.approx(omega_volume(graph), rel=1e-9)

    spider = build_spider(SpiderSpec(16))
    assert dual_cell_volumes(spider).sum() == pytest.approx(np.pi, rel=1e-6)

    ball = build_polyhedron(PolyhedronSpec(ops=("t",)))
    assert dual_cell_volumes(ball).sum() == pytest.approx(4 * np.pi, rel=1e-10)


def test_dual_cells_must_cover_the_domain(monkeypatch):
    """Сумма ячеек сверяется с |Ω|"""
    graph = square_lattice(5)
    monkeypatch.setattr("spectral.continuum.omega_volume", lambda g: 1.0 + 1e-3)
    with pytest.raises(TilingGap) as info:
        dual_cell_volumes(graph)
    assert info.value.total == pytest.approx(1.0, rel=1e-12)
    assert info.value.category == "tiling_gap"
    # a mismatch below the tolerance passes
    monkeypatch.setattr("spectral.continuum.omega_volume", lambda g: 1.0 + 1e-8)
    assert dual_cell_volumes(graph).sum() == pytest.approx(1.0, rel=1e-12)


def test_square_lattice_cells_and_constants():
    graph = square_lattice(5)
    cells = dual_cell_volumes(graph)
    assert cells[12] == pytest.approx(0.0625, rel=1e-12)  # centre vertex
    assert cells[0] == pytest.approx(0.015625, rel=1e-12)  # corner quarter cell
    r0, mu0 = homogenized_constants(graph)
    assert r0 == pytest.approx(0.25, rel=1e-14)
    assert mu0 == pytest.approx(25.0)


def test_density_modes():
    graph = square_lattice(4)
    assert_allclose(vertex_density(graph, "empirical"), 1.0)
    assert_allclose(vertex_density(graph), 1.0 / dual_cell_volumes(graph))
    with pytest.raises(InvalidSpec):
        vertex_density(graph, "kernel")


def test_abstract_graph_has_no_region():
    vertices = [Vertex(0, np.zeros(2)), Vertex(1, np.array([1.0, 0.0]))]
    graph = MetricGraph(vertices, [Edge(0, 1, 1.0)], 2)
    with pytest.raises(UnboundedCell):
        omega_volume(graph)
    with pytest.raises(UnboundedCell):
        dual_cell_volumes(graph)


def test_spider_polar_closed_form():
    radii = (0.25, 0.5, 0.75, 1.0)
    graph = build_spider(SpiderSpec(8, radii=radii))
    polar = polar_components(graph)
    assert np.all(np.isnan(polar[0]))
    ring = np.flatnonzero(np.abs(np.linalg.norm(graph.positions, axis=1) - 0.5) < 1e-12)
    assert ring.size == 8
    expected = spider_polar_tensor(0.5, 0.25, 2 * np.pi / 8)
    for v in ring:
        assert_allclose(polar[v], expected, atol=1e-12)


def test_square_lattice_is_homogeneous_and_isotropic():
    report = homogeneity_report(continuum_field(square_lattice(8)))
    assert report.n_interior == 36
    assert report.homogeneity_defect < 1e-14
    assert report.isotropy_defect < 1e-14


def test_soccer_ball_is_homogeneous():
    field = continuum_field(build_polyhedron(PolyhedronSpec(ops=("t",))))
    assert field.manifold_dim == 2
    assert field.normals is not None
    report = homogeneity_report(field)
    assert report.n_interior == 60
    assert report.relative_homogeneity < 1e-10
    # one hexagon-hexagon and two pentagon-hexagon edges per vertex
    assert report.relative_isotropy > 1e-3


def test_field_serialization():
    field = continuum_field(square_lattice(4), density="empirical")
    data = field_to_dict(field)
    assert len(data["R_upper"]) == 16 and len(data["R_upper"][0]) == 3
    assert data["density_mode"] == "empirical"
    assert data["omega_volume"] == pytest.approx(1.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
