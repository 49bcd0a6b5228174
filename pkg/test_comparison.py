"""
Тесты сравнения с континуумом: η, χ, сопоставление мод, исследование сходимости
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent))

from core.errors import AmbiguousMatch, InvalidSpec
from core.graph import graph_norm
from core.models import EigenMode, SolverConfig, Spectrum
from core.spectrum_store import SpectrumStore
from spectral.analytic import default_modes, interval_mode, square_mode
from spectral.builders import build_family, build_interval, goldberg_size, square_lattice
from spectral.comparison import (cached_solve, chi_error, compare_spectrum, comparison_window, convergence_study, eta,
                                 family_params_for_density, match_modes, matches_to_frame, plot_data,
                                 restrict_analytic)
from spectral.eigensolver import solve_spectrum

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


def fake_spectrum(*pairs):
    return Spectrum(modes=[EigenMode(k, np.zeros(1), mult) for k, mult in pairs])


def test_eta():
    assert eta(3.0, 3.0) == 0.0
    assert eta(2.9, 2.0) == pytest.approx(0.45)


def test_match_modes_by_nearest_level():
    analytic = [square_mode(1, 1), square_mode(1, 2), square_mode(2, 1)]
    spectrum = fake_spectrum((3.15, 1), (4.95, 2), (7.0, 1))
    matches = match_modes(spectrum, analytic)
    assert len(matches) == 3
    assert [m.k for m in matches] == [3.15, 4.95, 4.95]
    assert matches[0].eta == pytest.approx(abs(3.15 - np.pi) / np.pi)
    assert [m.analytic_index for m in matches[1:]] == [0, 1]
    assert np.isnan(matches[0].chi)

    frame = matches_to_frame(matches, "square", 100)
    assert frame["alpha"].tolist() == ["1,1", "1,2", "2,1"]
    assert frame["eta_corrected"].isna().all()


def test_split_computed_level_covers_analytic_level():
    analytic = [square_mode(1, 2), square_mode(2, 1)]
    matches = match_modes(fake_spectrum((4.94, 1), (4.99, 1), (6.3, 1)), analytic)
    assert sorted(m.k for m in matches) == [4.94, 4.99]


def test_ambiguous_matches():
    analytic = [square_mode(1, 2), square_mode(2, 1)]
    with pytest.raises(AmbiguousMatch):
        match_modes(fake_spectrum((4.95, 3)), analytic)
    with pytest.raises(AmbiguousMatch):
        match_modes(fake_spectrum((3.15, 1)), [square_mode(1, 1)] + analytic)
    with pytest.raises(InvalidSpec):
        match_modes(Spectrum(), analytic)


def test_extra_mode_at_the_same_level_is_ambiguous():
    crowded = fake_spectrum((np.pi + 2e-8, 1), (np.pi - 3e-8, 1), (4.95, 2))
    with pytest.raises(AmbiguousMatch) as info:
        match_modes(crowded, [square_mode(1, 1)], dedup_tol=1e-7)
    assert len(info.value.context["k"]) == 2
    # outside the tolerance the farther mode is simply left unmatched
    matches = match_modes(crowded, [square_mode(1, 1)], dedup_tol=1e-8)
    assert [m.k for m in matches] == [np.pi + 2e-8]


def test_restricted_mode_has_unit_norm():
    graph = square_lattice(6)
    f = restrict_analytic(graph, square_mode(2, 1), quad_order=12)
    assert graph_norm(graph, f, 12) == pytest.approx(1.0, rel=1e-12)


def test_interval_modes_are_exact():
    graph = build_interval(9)
    spectrum = solve_spectrum(graph, SolverConfig(k_min=1.0, k_max=10.0))
    table = compare_spectrum(graph, spectrum, "interval", modes=[interval_mode(n) for n in (1, 2, 3)])
    assert len(table) == 3
    assert (table["eta"] < 1e-10).all()
    assert (table["chi"] < 1e-6).all()


def test_square_lattice_against_continuum():
    graph = square_lattice(12)
    modes = default_modes("square")
    window, boundary = comparison_window("square", SolverConfig(), modes)
    assert boundary == "clamped"
    assert window.k_max == pytest.approx(1.1 * 3 * np.pi)
    spectrum = solve_spectrum(graph, window, boundary)
    table = compare_spectrum(graph, spectrum, "square", modes=modes)
    assert len(table) == 9
    assert (table["eta"] < 0.02).all()
    assert (table["chi"] < 0.06).all()
    diagonal = table[table["alpha"] == "1,1"].iloc[0]
    # diagonal modes are exact on the lattice
    assert diagonal["eta"] < 1e-9
    assert diagonal["chi"] < 1e-6

    first = spectrum.modes[0]
    assert chi_error(graph, first, [square_mode(1, 1)]) == pytest.approx(diagonal["chi"], abs=1e-9)


def test_family_params_for_density():
    assert family_params_for_density("square", 100) == {"n": 10}
    assert family_params_for_density("interval", 50) == {"n": 50}
    assert family_params_for_density("goldberg", 190) == {"level": 2}
    assert goldberg_size(2) == 180

    rect = family_params_for_density("rect", 400)
    assert rect == {"nx": 27}  # ny - 1 = 13 exactly
    assert abs(build_family("rect", **rect).n_vertices - 400) < 40

    spider = family_params_for_density("spider", 300, gamma=1.0)
    assert spider["M"] % 2 == 0 and spider["gamma"] == 1.0
    assert abs(build_family("spider", **spider).n_vertices - 300) < 60
    with pytest.raises(InvalidSpec):
        family_params_for_density("torus", 64)


def test_goldberg_window_is_free():
    window, boundary = comparison_window("goldberg", SolverConfig(k_min=0.1), [], jmax=4)
    assert boundary == "free"
    assert window.k_max == pytest.approx(1.1 * np.sqrt(15.0))
    assert window.k_min == pytest.approx(0.2)


def test_cached_solve_reuses_store(tmp_path):
    store = SpectrumStore(str(tmp_path / "spectra.db"))
    graph = build_interval(5)
    config = SolverConfig(k_min=1.0, k_max=7.0)
    first = cached_solve(graph, config, "clamped", store)
    second = cached_solve(graph, config, "clamped", store)
    np.testing.assert_allclose(second.ks, first.ks, rtol=0, atol=0)
    assert store.get_stats()["cache_hits"] == 1


def test_convergence_study_table():
    table = convergence_study("interval", [5, 9], SolverConfig(), nmax=3)
    assert sorted(table["n_vertices"].unique().tolist()) == [5, 9]
    assert len(table) == 6
    data = plot_data(table)
    assert data["eta_vs_V"].shape == (2, 3)
    assert "eta_j_vs_V" not in data
    with pytest.raises(InvalidSpec):
        convergence_study("torus", [16])


@pytest.mark.slow
def test_square_convergence_improves():
    table = convergence_study("square", [100, 400, 900], SolverConfig())
    assert sorted(table["n_vertices"].unique().tolist()) == [100, 400, 900]
    mean_eta = table.groupby("n_vertices")["eta"].mean()
    assert mean_eta.is_monotonic_decreasing
    assert mean_eta.iloc[-1] < mean_eta.iloc[0] / 4
    # diagonal modes are exact at every size, the rest shrink with |V|
    per_mode = table.pivot_table(index="alpha", columns="n_vertices", values="eta")
    for alpha, row in per_mode.iterrows():
        if row.min() > 1e-8:
            assert row.is_monotonic_decreasing, alpha


@pytest.mark.slow
def test_square_lattice_of_400_vertices():
    table = convergence_study("square", [400], SolverConfig())
    assert table["n_vertices"].unique().tolist() == [400]
    assert len(table) == 9
    assert table["eta"].max() <= 1e-2


@pytest.mark.slow
def test_rect_lattice_of_about_400_vertices():
    table = convergence_study("rect", [400], SolverConfig())
    assert table["n_vertices"].unique().tolist() == [27 * 14]
    assert len(table) == 9
    assert table["eta"].max() <= 1e-2


@pytest.mark.slow
def test_spider_web_of_about_500_vertices():
    graph = build_family("spider", M=32, gamma=1.0)
    assert abs(graph.n_vertices - 500) < 100
    modes = default_modes("spider", gamma=1.0)
    window, boundary = comparison_window("spider", SolverConfig(threads=4), modes)
    spectrum = solve_spectrum(graph, window, boundary)
    table = compare_spectrum(graph, spectrum, "spider", modes=modes, gamma=1.0)
    assert len(table) == len(modes)
    assert table["eta"].max() <= 3e-2

@pytest.mark.slow
def test_goldberg_rows_carry_corrected_error():
    table = convergence_study("goldberg", [60], SolverConfig(), jmax=3)
    assert table["eta_corrected"].notna().all()
    assert sorted(table["alpha"].str.split(",").str[0].astype(int).unique()) == [1, 2, 3]
    assert "eta_j_vs_V" in plot_data(table)


@pytest.mark.slow
def test_goldberg_correction_halves_level_three_error():
    table = convergence_study("goldberg", [180, 540], SolverConfig(threads=4), jmax=3, degeneracy_factor=False)
    finest = table[table["n_vertices"] == table["n_vertices"].max()]
    assert finest["n_vertices"].iloc[0] == 540
    level = finest[finest["alpha"].str.startswith("3,")]
    assert len(level) == 7
    assert level["eta"].mean() >= 2.0 * level["eta_corrected"].mean()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
