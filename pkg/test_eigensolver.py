"""
Тесты решателя спектра: шаг Ньютона, оценка следа Хатчинсона, корни, кратности, сертификаты
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import orjson
import pytest
from numpy.testing import assert_allclose

sys.path.append(str(Path(__file__).parent))

from core.errors import NoRootsFound
from core.graph import MetricGraph, edge_mass_matrix, eigenfunction_on_edges, graph_inner_product
from core.models import Edge, LatticeSpec, PolyhedronSpec, SolverConfig, SpiderSpec, Vertex
from spectral.builders import build_interval, build_lattice, build_polyhedron, build_spider, square_lattice
from spectral.eigensolver import (hutchinson_trace, merge_sector_spectra, negative_count, newton_step,
                                  sector_multiplicity, solve_spectrum, solve_spider_sectors, spectrum_from_dict,
                                  spectrum_to_dict, trace_of_x)
from spectral.perturbation import SOCCER_BALL_EDGE, soccer_ball_exact_spectrum
from spectral.secular import GraphSecularOperator, assemble

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


def single_edge_star():
    """Свободный центр и закреплённый лист на ребре длины 1: корень cot k = 0"""
    vertices = [Vertex(0, np.zeros(1)), Vertex(1, np.ones(1), boundary=True)]
    return MetricGraph(vertices, [Edge(0, 1, 1.0)], 1)


def test_newton_converges_to_half_pi():
    graph = single_edge_star()
    k = 1.0
    for iteration in range(1, 7):
        k = newton_step(graph, k, "clamped")
        if abs(k - np.pi / 2) < 1e-13:
            break
    assert abs(k - np.pi / 2) < 1e-13
    assert iteration <= 6


def test_exact_trace_matches_log_det_slope():
    graph = square_lattice(5)
    op = GraphSecularOperator(graph)
    k, h = 2.2, 1e-6
    slope = (np.linalg.slogdet(op.matrices(k + h).L)[1] - np.linalg.slogdet(op.matrices(k - h).L)[1]) / (2 * h)
    assert trace_of_x(op, k).mean == pytest.approx(slope, rel=1e-6)


def test_hutchinson_exact_on_diagonal():
    D = np.diag(np.linspace(-3.0, 5.0, 40))
    estimate = hutchinson_trace(D, 7, rng_seed=3)
    assert estimate.mean == pytest.approx(np.trace(D), rel=1e-14)
    assert estimate.variance == pytest.approx(0.0, abs=1e-20)


def test_hutchinson_within_standard_errors():
    rng = np.random.default_rng(11)
    inside = 0
    for trial in range(100):
        A = rng.standard_normal((50, 50))
        S = 0.5 * (A + A.T)
        estimate = hutchinson_trace(S, 30, rng_seed=trial)
        if abs(estimate.mean - np.trace(S)) <= 4.0 * estimate.std_error:
            inside += 1
    assert inside >= 97


def test_hutchinson_operator_form():
    M = np.arange(16.0).reshape(4, 4)
    a = hutchinson_trace(M, 5, rng_seed=1)
    b = hutchinson_trace(lambda U: M @ U, 5, rng_seed=1, n=4)
    assert a.mean == b.mean
    with pytest.raises(ValueError):
        hutchinson_trace(lambda U: U, 5)


def test_interval_roots():
    graph = build_interval(6)
    spectrum = solve_spectrum(graph, SolverConfig(k_min=0.5, k_max=10.0))
    assert_allclose(spectrum.ks, [np.pi, 2 * np.pi, 3 * np.pi], atol=1e-10)
    assert [m.multiplicity for m in spectrum.modes] == [1, 1, 1]
    for mode in spectrum.modes:
        assert mode.residual < 1e-8 and mode.kirchhoff < 1e-8


def test_no_roots():
    with pytest.raises(NoRootsFound):
        solve_spectrum(single_edge_star(), SolverConfig(k_min=2.0, k_max=3.0))


def test_torus_oracle_and_multiplicities():
    """Эквилатеральный тор 4×4: k = arccos(μ)/ℓ по спектру D⁻¹A"""
    graph = build_lattice(LatticeSpec(4, 4, boundary="periodic"))
    spectrum = solve_spectrum(graph, SolverConfig(k_min=0.5, k_max=11.0), boundary="free")
    expected = [4 * np.pi / 3, 2 * np.pi, 8 * np.pi / 3]
    assert_allclose(spectrum.ks, expected, atol=1e-9)
    assert [m.multiplicity for m in spectrum.modes] == [4, 6, 4]


def test_modes_are_graph_orthonormal():
    graph = square_lattice(6)
    spectrum = solve_spectrum(graph, SolverConfig(k_min=1.0, k_max=7.0))
    functions = []
    for mode in spectrum.modes:
        M = edge_mass_matrix(graph, mode.k)
        B = np.column_stack(mode.basis)
        assert_allclose(B.T @ (M @ B), np.eye(mode.multiplicity), atol=1e-8)
        functions.append(eigenfunction_on_edges(graph, mode.k, mode.f_V))
    for i in range(len(functions)):
        for j in range(i + 1, len(functions)):
            assert abs(graph_inner_product(graph, functions[i], functions[j], 24)) < 1e-8


def test_orientation_invariance():
    graph = build_spider(SpiderSpec(8, radii=(0.3, 0.6, 1.0)))
    config = SolverConfig(k_min=0.5, k_max=4.0)
    a = solve_spectrum(graph, config)
    b = solve_spectrum(graph.reversed(), config)
    assert_allclose(a.ks, b.ks, atol=1e-10)
    assert [m.multiplicity for m in a.modes] == [m.multiplicity for m in b.modes]


def test_spider_sectors_match_full_web():
    spec = SpiderSpec(8, radii=(0.25, 0.5, 0.75, 1.0))
    config = SolverConfig(k_min=0.5, k_max=4.0)
    full = solve_spectrum(build_spider(spec), config)
    merged = merge_sector_spectra(spec, solve_spider_sectors(spec, config), config.dedup_tol)
    assert_allclose(merged.ks, full.ks, atol=1e-9)
    assert [m.multiplicity for m in merged.modes] == [m.multiplicity for m in full.modes]
    assert sector_multiplicity(8, 0) == 1
    assert sector_multiplicity(8, 3) == 2
    assert sector_multiplicity(8, 4) == 1


def inertia_count(graph, k_min, k_max, boundary="clamped", eps=1e-6):
    """Число корней на [k_min, k_max] с кратностями: рост числа отрицательных собственных значений L(k)"""
    op = GraphSecularOperator(graph, boundary)

    def negatives(k):
        return int(np.count_nonzero(np.linalg.eigvalsh(assemble(graph, k, boundary).L) < 0))

    ends = [k_min, *op.poles(k_min, k_max), k_max]
    total = 0
    for lo, hi in zip(ends[:-1], ends[1:]):
        a = lo + eps if lo > k_min else lo
        b = hi - eps if hi < k_max else hi
        if b > a:
            total += negatives(b) - negatives(a)
    return total


def test_negative_count_steps_by_multiplicity():
    graph = build_lattice(LatticeSpec(4, 4, boundary="periodic"))
    op = GraphSecularOperator(graph, "free")
    # torus roots 4π/3 (4-fold) and 2π (6-fold), ℓ = 1/4 puts poles at 4πn
    assert negative_count(op, 4 * np.pi / 3 + 1e-4) - negative_count(op, 4 * np.pi / 3 - 1e-4) == 4
    assert negative_count(op, 2 * np.pi + 1e-4) - negative_count(op, 2 * np.pi - 1e-4) == 6


def test_small_window_near_zero_does_not_crash():
    """Окно с k_min = 0.3: ньютоновские шаги не уходят в k <= 0"""
    graph = build_lattice(LatticeSpec(5, 4, spacing=(0.31, 0.47), boundary="free", connectivity="both"))
    config = SolverConfig(k_min=0.3, k_max=20.0)
    spectrum = solve_spectrum(graph, config, boundary="free")
    assert np.all(spectrum.ks >= config.k_min) and np.all(spectrum.ks <= config.k_max)
    assert spectrum.total_multiplicity == inertia_count(graph, 0.3, 20.0, "free")


def test_roots_below_poles_are_found():
    """Двукратный корень вплотную под полюсом не теряется"""
    graph = build_spider(SpiderSpec(5, radii=(0.3, 0.7, 1.0)))
    spectrum = solve_spectrum(graph, SolverConfig(k_min=1.0, k_max=15.0))
    assert inertia_count(graph, 1.0, 15.0) == 44
    assert spectrum.total_multiplicity == 44
    near = [m for m in spectrum.modes if abs(m.k - 7.83555713) < 1e-6]
    assert len(near) == 1 and near[0].multiplicity == 2
    assert 7.635424 < near[0].k < 7.853982


def test_count_check_can_be_switched_off():
    graph = build_spider(SpiderSpec(5, radii=(0.3, 0.7, 1.0)))
    config = SolverConfig(k_min=1.0, k_max=15.0, seed_density=1.0, count_check=False)
    sparse_seeds = solve_spectrum(graph, config)
    assert sparse_seeds.total_multiplicity < 44
    checked = solve_spectrum(graph, replace(config, count_check=True))
    assert checked.total_multiplicity == 44


def test_sector_m_equal_to_M_matches_m_zero():
    spec = SpiderSpec(8, radii=(0.25, 0.5, 0.75, 1.0))
    config = SolverConfig(k_min=0.5, k_max=4.0)
    sectors = solve_spider_sectors(spec, config, [0, 8])
    assert_allclose(sectors[8].ks, sectors[0].ks, atol=1e-10)
    assert [m.multiplicity for m in sectors[8].modes] == [m.multiplicity for m in sectors[0].modes]


def test_spectrum_json_roundtrip():
    spectrum = solve_spectrum(build_interval(4), SolverConfig(k_min=1.0, k_max=7.0))
    restored = spectrum_from_dict(orjson.loads(orjson.dumps(spectrum_to_dict(spectrum))))
    assert_allclose(restored.ks, spectrum.ks, rtol=0, atol=0)
    assert_allclose(restored.modes[0].f_V, spectrum.modes[0].f_V, rtol=0, atol=0)
    assert restored.trace_mode == "exact"


@pytest.mark.slow
def test_soccer_ball_exact_spectrum():
    graph = build_polyhedron(PolyhedronSpec(ops=("t",)))
    spectrum = solve_spectrum(graph, SolverConfig(k_min=0.1, k_max=7.5, threads=4), boundary="free")
    exact = [(k, m) for k, m in soccer_ball_exact_spectrum(SOCCER_BALL_EDGE) if k > 0.1]
    assert_allclose(spectrum.ks, [k for k, _ in exact], atol=1e-9)
    assert [m.multiplicity for m in spectrum.modes] == [m for _, m in exact]
    assert spectrum.total_multiplicity == 59


@pytest.mark.slow
def test_stochastic_agrees_with_exact():
    graph = square_lattice(20)
    exact = solve_spectrum(graph, SolverConfig(k_min=2.0, k_max=6.0, trace_mode="exact"))
    stochastic = solve_spectrum(graph, SolverConfig(k_min=2.0, k_max=6.0, trace_mode="stochastic", rng_seed=5))
    assert stochastic.trace_mode == "stochastic"
    assert_allclose(stochastic.ks, exact.ks, atol=1e-7)


@pytest.mark.slow
def test_stochastic_sparse_path_at_large_size():
    """|L| = 2500 > DENSE_LIMIT: разреженная сборка, стохастический след и доводка eigsh"""
    graph = square_lattice(52)
    ell = 1.0 / 51.0
    config = SolverConfig(k_min=4.8, k_max=5.1, seed_density=20.0, rng_seed=3)
    stochastic = solve_spectrum(graph, config)
    assert stochastic.trace_mode == "stochastic"
    assert GraphSecularOperator(graph).use_sparse
    # (1, 2) and (2, 1) share cos(kℓ) = (cos πℓ + cos 2πℓ)/2
    expected = np.arccos(0.5 * (np.cos(np.pi * ell) + np.cos(2.0 * np.pi * ell))) / ell
    assert_allclose(stochastic.ks, [expected], atol=1e-8)
    assert stochastic.modes[0].multiplicity == 2
    exact = solve_spectrum(graph, replace(config, trace_mode="exact"))
    assert_allclose(stochastic.ks, exact.ks, atol=1e-8)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
