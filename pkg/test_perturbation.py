"""
Тесты теории возмущений первого порядка на сферических графах (футбольный мяч)
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.append(str(Path(__file__).parent))

from core.errors import InvalidSpec
from core.models import EigenMode, PolyhedronSpec, Spectrum
from spectral.builders import build_polyhedron, square_lattice
from spectral.continuum import continuum_field
from spectral.perturbation import (SOCCER_BALL_EDGE, assemble_AB, level_errors, observed_levels,
                                   perturbation_problem, soccer_ball_exact_spectrum, soccer_ball_gammas,
                                   sphere_quadrature, splitting_report, splittings)

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def soccer_ball():
    return build_polyhedron(PolyhedronSpec(ops=("t",)))


@pytest.fixture(scope="module")
def exact_spectrum():
    modes = [EigenMode(k, np.zeros(60), mult) for k, mult in soccer_ball_exact_spectrum(SOCCER_BALL_EDGE)]
    return Spectrum(modes=modes, boundary="free")


def test_soccer_ball_polynomial():
    gammas = soccer_ball_gammas()
    assert sum(mult for _, mult in gammas) == 60
    assert gammas[0] == (3.0, 1)
    spectrum = soccer_ball_exact_spectrum()
    assert spectrum[0][0] == 0.0
    assert all(a[0] < b[0] for a, b in zip(spectrum, spectrum[1:]))
    # lowest non-trivial level sits next to k̃ = 1
    assert spectrum[1][1] == 3
    assert spectrum[1][0] == pytest.approx(1.0, abs=0.01)


def test_sphere_quadrature_weights():
    points, weights = sphere_quadrature(12)
    assert weights.sum() == pytest.approx(4 * np.pi, rel=1e-14)
    assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-15)
    assert np.sum(weights * points[:, 2] ** 2) == pytest.approx(4 * np.pi / 3, rel=1e-13)


def test_observed_levels_blocks(exact_spectrum):
    levels = observed_levels(exact_spectrum, 4)
    assert [len(levels[j]) for j in (1, 2, 3, 4)] == [3, 5, 7, 9]
    assert np.all(levels[1] > 0)
    assert np.ptp(levels[4]) == pytest.approx(0.0, abs=1e-14)


def test_low_levels_do_not_split(soccer_ball):
    field = continuum_field(soccer_ball, density="empirical")
    for j in (1, 2):
        result = splittings(perturbation_problem(soccer_ball, j, field))
        assert result.lambda0 == pytest.approx(-j * (j + 1) / 2.0)
        assert np.ptp(result.lambda1) < 1e-10
        assert result.reliable


def test_level_three_splits_three_plus_four(soccer_ball):
    result = splittings(perturbation_problem(soccer_ball, 3))
    lam = result.lambda1
    assert np.ptp(lam[:3]) < 1e-10 or np.ptp(lam[:4]) < 1e-10
    assert np.ptp(lam) > 1e-6
    assert np.all(np.diff(result.k_pred) <= 1e-12)


def test_degeneracy_factor_scales_splittings(soccer_ball):
    problem = perturbation_problem(soccer_ball, 3)
    with_factor = splittings(problem, degeneracy_factor=True)
    plain = splittings(problem, degeneracy_factor=False)
    assert_allclose(plain.lambda1, 7.0 * with_factor.lambda1, rtol=1e-9, atol=1e-13)
    A, B = assemble_AB(problem, degeneracy_factor=False)
    assert_allclose(A, A.T, atol=0)
    assert np.all(np.linalg.eigvalsh(B) < 0)


def test_correction_improves_level_three(soccer_ball, exact_spectrum):
    report = splitting_report(soccer_ball, exact_spectrum, 4, degeneracy_factor=False)
    assert list(report["j"].unique()) == [1, 2, 3, 4]
    errors = level_errors(report).set_index("j")
    assert errors.loc[3, "eta_corrected"] < errors.loc[3, "eta"]
    assert errors.loc[4, "eta_corrected"] < errors.loc[4, "eta"]


def test_rejects_non_sphere_graphs(soccer_ball):
    with pytest.raises(InvalidSpec):
        perturbation_problem(square_lattice(5), 1)
    with pytest.raises(InvalidSpec):
        perturbation_problem(soccer_ball, -1)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
