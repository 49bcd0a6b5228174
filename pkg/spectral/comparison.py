"""Error metrics between computed graph modes and continuum modes.

η = |k - k̃|/k̃ and χ = ‖f - P f‖_G, with P the graph-L² orthogonal
projector onto the span of the analytic eigenspace restricted to the graph.
"""
from __future__ import annotations

import logging
import time
from dataclasses import replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from tqdm import tqdm

from core.errors import AmbiguousMatch, InvalidSpec, NoRootsFound
from core.graph import (DEFAULT_QUAD_ORDER, EdgeFunction, MetricGraph, eigenfunction_on_edges,
                        graph_to_dict, quadrature_grid)
from core.models import (AnalyticMode, ConvergenceRow, EigenMode, ModeMatch, SolverConfig, Spectrum,
                         SpiderSpec)
from spectral.analytic import default_modes, group_levels, level_label, sphere_level
from spectral.builders import build_family, goldberg_size, spider_radii
from spectral.eigensolver import solve_spectrum, spectrum_from_dict, spectrum_to_dict
from spectral.perturbation import observed_levels, splitting_report

logger = logging.getLogger(__name__)

CONVERGENCE_FAMILIES = ("square", "rect", "spider", "goldberg", "interval")


def eta(k: float, k_tilde: float) -> float:
    return float(abs(k - k_tilde) / k_tilde)


# ----------------------------------------------------------------------------
# restriction to the graph
# ----------------------------------------------------------------------------
class _Grid:
    """Flattened Gauss-Legendre points over all edges."""

    def __init__(self, graph: MetricGraph, quad_order: int = DEFAULT_QUAD_ORDER):
        edge_ids, x, w = quadrature_grid(graph, quad_order)
        self.edge_ids = np.asarray(edge_ids).ravel()
        self.x = np.asarray(x).ravel()
        self.w = np.asarray(w).ravel()
        self.points = graph.edge_points(self.edge_ids, self.x)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.w * a * b))

    def gram(self, columns: np.ndarray) -> np.ndarray:
        return (columns * self.w[:, None]).T @ columns


def _evaluate(mode: AnalyticMode, points: np.ndarray) -> np.ndarray:
    return mode(points.reshape(-1, points.shape[-1])).reshape(points.shape[:-1])


def restrict_analytic(graph: MetricGraph, mode: AnalyticMode,
                      quad_order: int = DEFAULT_QUAD_ORDER) -> EdgeFunction:
    """f̃ along the straight edges, normalized to unit graph norm.

    Chord points of sphere graphs are projected radially by the harmonic
    evaluators themselves.
    """
    grid = _Grid(graph, quad_order)
    raw = _evaluate(mode, grid.points)
    norm = np.sqrt(grid.inner(raw, raw))
    if norm == 0:
        raise InvalidSpec(f"analytic mode {mode.indices} vanishes on the graph")

    def f(edge_ids, x):
        edge_ids, x = np.broadcast_arrays(np.asarray(edge_ids), np.asarray(x, dtype=float))
        return _evaluate(mode, graph.edge_points(edge_ids, x)) / norm

    return f


def _restricted_columns(grid: _Grid, modes: Sequence[AnalyticMode]) -> np.ndarray:
    cols = np.stack([_evaluate(mode, grid.points) for mode in modes], axis=1)
    norms = np.sqrt(np.einsum("i,ij,ij->j", grid.w, cols, cols))
    return cols / norms[None, :]


def _computed_values(graph: MetricGraph, grid: _Grid, k: float, f_V: np.ndarray) -> np.ndarray:
    values = eigenfunction_on_edges(graph, k, f_V)(grid.edge_ids, grid.x)
    return values / np.sqrt(grid.inner(values, values))


def _projection(grid: _Grid, values: np.ndarray, columns: np.ndarray) -> Tuple[float, np.ndarray]:
    """(χ, α) for unit-norm values against the restricted analytic columns."""
    alpha = (columns * grid.w[:, None]).T @ values
    gram = grid.gram(columns)
    captured = float(alpha @ linalg.solve(gram, alpha, assume_a="pos"))
    chi = float(np.sqrt(max(0.0, grid.inner(values, values) - captured)))
    return chi, alpha


def chi_error(graph: MetricGraph, computed: EigenMode, analytic: Sequence[AnalyticMode],
              quad_order: int = DEFAULT_QUAD_ORDER, f_V: Optional[np.ndarray] = None) -> float:
    """‖f - P f‖_G for the computed mode (its first basis vector unless f_V is given)."""
    grid = _Grid(graph, quad_order)
    vector = computed.f_V if f_V is None else f_V
    values = _computed_values(graph, grid, computed.k, vector)
    chi, _ = _projection(grid, values, _restricted_columns(grid, analytic))
    return chi


# ----------------------------------------------------------------------------
# matching
# ----------------------------------------------------------------------------
def match_modes(spectrum: Spectrum, analytic: Sequence[AnalyticMode], graph: Optional[MetricGraph] = None,
                quad_order: int = DEFAULT_QUAD_ORDER, dedup_tol: float = 1e-7) -> List[ModeMatch]:
    """Nearest-k̃ assignment of computed modes to analytic eigenspaces.

    Each analytic level takes the closest unused computed modes until their
    multiplicities cover its dimension; one row per analytic member.  χ uses
    one representative computed vector per level and needs ``graph``.  Any
    further computed mode within ``dedup_tol`` of a covered k̃ is ambiguous.
    """
    if not spectrum.modes or not analytic:
        raise InvalidSpec("match_modes needs computed and analytic modes")
    used = np.zeros(len(spectrum.modes), dtype=bool)
    ks = spectrum.ks
    grid = _Grid(graph, quad_order) if graph is not None else None
    matches: List[ModeMatch] = []

    for level in group_levels(analytic):
        k_tilde = level[0].k_tilde
        dim = len(level)
        chosen: List[int] = []
        covered = 0
        order = np.argsort(np.abs(ks - k_tilde))
        for idx in order:
            if covered >= dim:
                break
            if used[idx]:
                continue
            chosen.append(int(idx))
            covered += spectrum.modes[idx].multiplicity
        if covered < dim:
            raise AmbiguousMatch(f"level {level_label(level)} has {covered} computed modes for dimension {dim}")
        if covered > dim:
            raise AmbiguousMatch(
                f"computed multiplicity {covered} exceeds analytic dimension {dim} at k̃={k_tilde:.6g}",
                k=[float(ks[i]) for i in chosen],
            )
        crowd = [int(i) for i in order if not used[i] and i not in chosen and abs(ks[i] - k_tilde) <= dedup_tol]
        if crowd:
            raise AmbiguousMatch(
                f"{len(crowd)} extra computed modes within {dedup_tol:g} of k̃={k_tilde:.6g}",
                k=[float(ks[i]) for i in chosen + crowd],
            )
        used[chosen] = True

        expanded: List[EigenMode] = []
        for idx in sorted(chosen, key=lambda i: ks[i]):
            expanded += [spectrum.modes[idx]] * spectrum.modes[idx].multiplicity

        chi, alpha = float("nan"), np.full(dim, np.nan)
        if grid is not None:
            rep = expanded[0]
            values = _computed_values(graph, grid, rep.k, rep.f_V)
            chi, alpha = _projection(grid, values, _restricted_columns(grid, level))

        for i, computed in enumerate(expanded):
            matches.append(ModeMatch(computed, list(level), i, eta(computed.k, k_tilde), chi, alpha))

    bijective = len({id(m.computed) for m in matches})
    logger.debug("matched %d analytic modes onto %d computed modes", len(matches), bijective)
    return matches


def matches_to_frame(matches: Sequence[ModeMatch], family: str, n_vertices: int,
                     runtime: float = 0.0) -> pd.DataFrame:
    rows = [
        ConvergenceRow(
            family=family, n_vertices=n_vertices,
            alpha=",".join(str(i) for i in m.analytic[m.analytic_index].indices)
            + ("s" if m.analytic[m.analytic_index].params.get("parity") == "sin" else ""),
            k=m.k, k_tilde=m.k_tilde, eta=m.eta, chi=m.chi, runtime=runtime,
        ).to_dict()
        for m in matches
    ]
    return pd.DataFrame(rows, columns=list(ConvergenceRow.__dataclass_fields__))


# ----------------------------------------------------------------------------
# families and densities
# ----------------------------------------------------------------------------
def family_params_for_density(family: str, density: int, **params: Any) -> Dict[str, Any]:
    """Builder parameters whose |V| is closest to ``density``."""
    density = int(density)
    if family == "square":
        return {**params, "n": max(3, int(round(np.sqrt(density))))}
    if family == "interval":
        return {**params, "n": max(2, density)}
    if family == "rect":
        r = tuple(params.get("r", (1.0 / 3.0, 2.0 / 3.0)))
        ratio = r[0] / r[1]
        # only grids where ny - 1 = (nx - 1) r1/r2 exactly keep the analytic ratio
        exact = [nx for nx in range(3, 2001) if abs((nx - 1) * ratio - round((nx - 1) * ratio)) < 1e-9]
        best = min(exact or range(3, 2001),
                   key=lambda nx: abs(nx * (int(round((nx - 1) * ratio)) + 1) - density))
        return {**params, "nx": best}
    if family == "spider":
        gamma = float(params.get("gamma", 1.0))
        inner = params.get("inner_radius")

        def size(M: int) -> int:
            return 1 + M * len(spider_radii(SpiderSpec(M, gamma, inner_radius=inner)))

        best = min(range(8, 257, 2), key=lambda M: abs(size(M) - density))
        return {**params, "M": best}
    if family == "goldberg":
        level = min(range(1, 8), key=lambda L: abs(goldberg_size(L) - density))
        return {**params, "level": level}
    raise InvalidSpec(f"no convergence study for family {family!r}")


def _solver_window(config: SolverConfig, modes: Sequence[AnalyticMode]) -> SolverConfig:
    k_tildes = [m.k_tilde for m in modes if m.k_tilde > 0]
    return replace(config, k_min=max(1e-3, 0.5 * min(k_tildes)), k_max=1.1 * max(k_tildes))


def cached_solve(graph: MetricGraph, config: SolverConfig, boundary: str, store=None) -> Spectrum:
    if store is None:
        return solve_spectrum(graph, config, boundary)
    sig = store.signature(graph_to_dict(graph), config.to_dict(), boundary)
    payload = store.get(sig)
    if payload is not None:
        return spectrum_from_dict(payload)
    spectrum = solve_spectrum(graph, config, boundary)
    store.put(sig, spectrum_to_dict(spectrum), graph.n_vertices, config.k_min, config.k_max)
    return spectrum


def _goldberg_rows(graph: MetricGraph, spectrum: Spectrum, jmax: int, runtime: float,
                   degeneracy_factor: bool, quad_order: int) -> List[dict]:
    report = splitting_report(graph, spectrum, jmax, degeneracy_factor)
    levels = observed_levels(spectrum, jmax)
    grid = _Grid(graph, quad_order)
    rows = []
    for j, block in levels.items():
        rep = min(spectrum.modes, key=lambda m: abs(m.k - block[0]))
        values = _computed_values(graph, grid, rep.k, rep.f_V)
        chi, _ = _projection(grid, values, _restricted_columns(grid, sphere_level(j)))
        k_tilde = float(np.sqrt(j * (j + 1) / 2.0))
        level_rows = report[report["j"] == j]
        for _, r in level_rows.iterrows():
            rows.append(ConvergenceRow(
                family="goldberg", n_vertices=graph.n_vertices, alpha=f"{j},{int(r['m_index'])}",
                k=float(r["k_observed"]), k_tilde=k_tilde, eta=float(r["eta"]), chi=chi,
                runtime=runtime, eta_corrected=float(r["eta_corrected"]),
            ).to_dict())
    return rows


def comparison_window(family: str, config: SolverConfig, modes: Sequence[AnalyticMode],
                      jmax: int = 4) -> Tuple[SolverConfig, str]:
    """Solver range covering the analytic modes, and the boundary to solve with."""
    if family == "goldberg":
        k_next = np.sqrt((jmax + 1) * (jmax + 2) / 2.0)
        return replace(config, k_min=max(config.k_min, 0.2), k_max=1.1 * k_next), "free"
    return _solver_window(config, modes), "clamped"


def compare_spectrum(graph: MetricGraph, spectrum: Spectrum, family: str,
                     modes: Optional[Sequence[AnalyticMode]] = None, jmax: int = 4, runtime: float = 0.0,
                     degeneracy_factor: bool = False, quad_order: int = DEFAULT_QUAD_ORDER,
                     dedup_tol: float = 1e-7, **params: Any) -> pd.DataFrame:
    """Report rows (ConvergenceRow columns) for one solved graph."""
    columns = list(ConvergenceRow.__dataclass_fields__)
    if family == "goldberg":
        return pd.DataFrame(_goldberg_rows(graph, spectrum, jmax, runtime, degeneracy_factor, quad_order),
                            columns=columns)
    if modes is None:
        modes = default_modes(family, jmax=jmax, **params)
    matches = match_modes(spectrum, modes, graph, quad_order, dedup_tol)
    return matches_to_frame(matches, family, graph.n_vertices, runtime)


def convergence_study(family: str, densities: Iterable[int], config: Optional[SolverConfig] = None,
                      modes: Optional[Sequence[AnalyticMode]] = None, store=None,
                      progress: bool = False, degeneracy_factor: bool = False,
                      quad_order: int = DEFAULT_QUAD_ORDER, **params: Any) -> pd.DataFrame:
    """η and χ per analytic mode and graph density.

    Goldberg families assign computed modes to levels j = 1..jmax in blocks of
    2j+1 and add the first-order corrected error.
    """
    if family not in CONVERGENCE_FAMILIES:
        raise InvalidSpec(f"no convergence study for family {family!r}")
    config = config or SolverConfig()
    jmax = int(params.pop("jmax", 4))
    if modes is None:
        modes = default_modes(family, jmax=jmax, **params)
    window, boundary = comparison_window(family, config, modes, jmax)

    frames: List[pd.DataFrame] = []
    for density in tqdm(list(densities), desc=f"{family} densities", disable=not progress):
        build_params = family_params_for_density(family, density, **params)
        graph = build_family(family, **build_params)
        started = time.perf_counter()
        try:
            spectrum = cached_solve(graph, window, boundary, store)
        except NoRootsFound:
            logger.warning("no roots for %s at |V|=%d", family, graph.n_vertices)
            continue
        runtime = time.perf_counter() - started
        logger.info("%s |V|=%d: %d modes in %.2fs", family, graph.n_vertices, len(spectrum.modes), runtime)
        frames.append(compare_spectrum(graph, spectrum, family, modes, jmax, runtime,
                                       degeneracy_factor, quad_order, window.dedup_tol))

    columns = list(ConvergenceRow.__dataclass_fields__)
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]


def plot_data(table: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """η and χ against |V|, one column per mode label."""
    out = {
        "eta_vs_V": table.pivot_table(index="n_vertices", columns="alpha", values="eta", aggfunc="mean"),
        "chi_vs_V": table.pivot_table(index="n_vertices", columns="alpha", values="chi", aggfunc="mean"),
    }
    if "eta_corrected" in table and table["eta_corrected"].notna().any():
        by_level = table.assign(j=table["alpha"].str.split(",").str[0].astype(int))
        out["eta_j_vs_V"] = by_level.pivot_table(index="n_vertices", columns="j",
                                                  values=["eta", "eta_corrected"], aggfunc="mean")
    return out
