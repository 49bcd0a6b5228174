"""
Тесты метрического графа: валидация, файловый формат, квадратуры, решение на рёбрах
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.append(str(Path(__file__).parent))

from core.errors import InvalidSpec, IoError, OutOfRange, PoleOnEdge
from core.graph import (MetricGraph, constant_function, edge_eigenfunction, edge_mass_matrix,
                        eigenfunction_on_edges, gauss_legendre, graph_from_dict, graph_inner_product,
                        graph_norm, graph_to_dict, kirchhoff_residual, load_graph, save_graph)
from core.models import Edge, EigenMode, Vertex

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


def path_graph(n_edges=2, length=0.5):
    vertices = [Vertex(i, np.array([i * length])) for i in range(n_edges + 1)]
    edges = [Edge(i, i + 1, length) for i in range(n_edges)]
    return MetricGraph(vertices, edges, 1)


def triangle():
    pts = [np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    vertices = [Vertex(i, p) for i, p in enumerate(pts)]
    edges = [Edge(0, 1, 1.0), Edge(1, 2, np.sqrt(2.0)), Edge(2, 0, 1.0)]
    return MetricGraph(vertices, edges, 2)


def test_rejects_bad_graphs():
    """Петли, кратные рёбра, изолированные вершины и несвязность"""
    v = [Vertex(0, np.zeros(1)), Vertex(1, np.ones(1))]
    with pytest.raises(InvalidSpec):
        MetricGraph(v, [Edge(0, 0, 1.0)], 1)
    with pytest.raises(InvalidSpec):
        MetricGraph(v, [Edge(0, 1, 1.0), Edge(1, 0, 1.0)], 1)
    with pytest.raises(InvalidSpec):
        MetricGraph(v, [Edge(0, 1, -1.0)], 1)
    with pytest.raises(InvalidSpec):
        MetricGraph(v + [Vertex(2, np.array([5.0]))], [Edge(0, 1, 1.0)], 1)

    four = [Vertex(i, np.array([float(i)])) for i in range(4)]
    with pytest.raises(InvalidSpec):
        MetricGraph(four, [Edge(0, 1, 1.0), Edge(2, 3, 1.0)], 1)
    g = MetricGraph(four, [Edge(0, 1, 1.0), Edge(2, 3, 1.0)], 1, allow_disconnected=True)
    assert g.n_components == 2


def test_file_roundtrip(tmp_path):
    graph = triangle()
    path = tmp_path / "triangle.json"
    save_graph(graph, path)
    loaded = load_graph(path)
    assert loaded.n_vertices == 3 and loaded.n_edges == 3
    assert_allclose(loaded.lengths, graph.lengths, rtol=0, atol=0)
    assert_allclose(loaded.positions, graph.positions, rtol=0, atol=0)


def test_missing_length_defaults_to_distance():
    data = graph_to_dict(triangle())
    for e in data["edges"]:
        del e["length"]
    graph = graph_from_dict(data)
    assert_allclose(graph.lengths, [1.0, np.sqrt(2.0), 1.0], atol=1e-12)


def test_load_errors(tmp_path):
    with pytest.raises(IoError):
        load_graph(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(IoError):
        load_graph(broken)
    with pytest.raises(InvalidSpec):
        graph_from_dict({"vertices": []})


def test_gauss_legendre_exactness():
    nodes, weights = gauss_legendre(3)
    assert weights.sum() == pytest.approx(1.0)
    assert np.sum(weights * nodes ** 5) == pytest.approx(1.0 / 6.0, rel=1e-14)


def test_constant_norm_is_total_length():
    graph = triangle()
    assert graph_norm(graph, constant_function(1.0)) == pytest.approx(np.sqrt(graph.total_length), rel=1e-14)


def test_closed_form_matches_vertex_values():
    graph = triangle()
    f_V = np.array([0.3, -1.2, 0.7])
    k = 1.3
    f = eigenfunction_on_edges(graph, k, f_V)
    ids = np.arange(graph.n_edges)
    assert_allclose(f(ids, np.zeros(3)), f_V[graph.tails], atol=1e-14)
    assert_allclose(f(ids, graph.lengths), f_V[graph.heads], atol=1e-12)

    mode = EigenMode(k, f_V, 1)
    x = 0.37
    assert edge_eigenfunction(graph, mode, 1, x) == pytest.approx(float(f(np.array([1]), np.array([x]))[0]))
    with pytest.raises(OutOfRange):
        edge_eigenfunction(graph, mode, 0, 2.0)


def test_mass_matrix_gives_graph_norm():
    graph = triangle()
    f_V = np.array([1.0, 0.5, -0.25])
    k = 2.1
    M = edge_mass_matrix(graph, k)
    f = eigenfunction_on_edges(graph, k, f_V)
    assert f_V @ (M @ f_V) == pytest.approx(graph_inner_product(graph, f, f), rel=1e-12)


def test_pole_detection():
    graph = path_graph(2, 0.5)
    with pytest.raises(PoleOnEdge):
        eigenfunction_on_edges(graph, 2.0 * np.pi, np.ones(3))


def test_kirchhoff_at_neumann_mode():
    """cos(πx) на отрезке из двух рёбер длины 1/2"""
    graph = path_graph(2, 0.5)
    mode = EigenMode(np.pi, np.array([1.0, 0.0, -1.0]), 1)
    assert kirchhoff_residual(graph, mode, "free") < 1e-12
    wrong = EigenMode(np.pi, np.array([1.0, 0.5, -1.0]), 1)
    assert kirchhoff_residual(graph, wrong, "free") > 1e-3


def test_reversal_and_scaling():
    graph = triangle()
    rev = graph.reversed()
    assert_allclose(rev.tails, graph.heads)
    k = 1.7
    assert_allclose(edge_mass_matrix(rev, k).toarray(), edge_mass_matrix(graph, k).toarray(), atol=1e-13)
    scaled = graph.scaled(2.0)
    assert_allclose(scaled.lengths, 2.0 * graph.lengths)
    assert scaled.total_length == pytest.approx(2.0 * graph.total_length)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
