"""
Тесты дисперсионных соотношений периодических решёток и их проверки через L(k)
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent))

from core.errors import InvalidSpec
from core.models import DispersionQuery, LatticeSpec
from spectral.builders import build_lattice, square_lattice
from spectral.dispersion import (combined_residual, cross_check_secular, dispersion_k, limit_defect,
                                 quantized_wavenumber, spherical_triangle_cosines, verify_limit)

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


def test_cardinal_closed_form():
    query = DispersionQuery("cardinal", 0.1, 3.0, 4.0)
    k = dispersion_k(query)
    expected = np.arccos(0.5 * (np.cos(0.3) + np.cos(0.4))) / 0.1
    assert k == pytest.approx(expected, rel=1e-12)
    assert dispersion_k(DispersionQuery("both", 0.1, 0.0, 0.0)) == 0.0


@pytest.mark.parametrize("ell,kx,ky", [(0.3, 1.0, 2.0), (0.05, 7.0, -3.0), (1e-4, 1.0, 1.0), (0.5, 2.5, 0.0)])
def test_ordinal_is_spherical_pythagoras(ell, kx, ky):
    cos_c, cos_ab = spherical_triangle_cosines(DispersionQuery("ordinal", ell, kx, ky))
    assert abs(cos_c - cos_ab) < 1e-14


def test_small_spacing_keeps_precision():
    # half-angle forms avoid cancellation in 1 - cos(kℓ)
    k = dispersion_k(DispersionQuery("cardinal", 1e-7, 1.0, 0.0))
    assert k == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-12)
    assert limit_defect(DispersionQuery("ordinal", 1e-6, 1.0, 1.0)) < 1e-10


@pytest.mark.parametrize("connectivity,ky", [("cardinal", 0.0), ("ordinal", 0.5), ("both", 0.5)])
def test_isotropic_limit_is_second_order(connectivity, ky):
    table = verify_limit(connectivity, [0.1, 0.05, 0.025, 0.0125], kx=1.0, ky=ky)
    assert list(table.columns) == ["ell", "k", "defect", "ratio"]
    assert np.isnan(table["ratio"].iloc[0])
    assert table["defect"].is_monotonic_decreasing
    for ratio in table["ratio"].iloc[1:]:
        assert 3.5 <= ratio <= 4.5


def test_combined_root_solves_vertex_condition():
    query = DispersionQuery("both", 0.2, 1.5, 0.7)
    k = dispersion_k(query)
    assert abs(combined_residual(k, query)) < 1e-12
    assert 0 < k < np.pi / (np.sqrt(2.0) * 0.2)


@pytest.mark.parametrize("connectivity,p,q", [("cardinal", 1, 0), ("cardinal", 2, 3), ("ordinal", 1, 2), ("both", 1, 1)])
def test_plane_wave_cross_check(connectivity, p, q):
    graph = build_lattice(LatticeSpec(8, 8, boundary="periodic", connectivity=connectivity))
    kx, ky = quantized_wavenumber(p, 1.0), quantized_wavenumber(q, 1.0)
    query = DispersionQuery(connectivity, 1.0 / 8, kx, ky)
    assert cross_check_secular(graph, query) <= 1e-9


def test_invalid_queries():
    with pytest.raises(InvalidSpec):
        dispersion_k(DispersionQuery("hexagonal", 0.1, 1.0, 0.0))
    with pytest.raises(InvalidSpec):
        dispersion_k(DispersionQuery("cardinal", 0.0, 1.0, 0.0))
    with pytest.raises(InvalidSpec):
        cross_check_secular(square_lattice(5), DispersionQuery("cardinal", 0.25, 1.0, 0.0))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
