"""Roots of det L(k) = 0.

Newton on the log-determinant: by Jacobi's formula d/dk log det L = tr(L⁻¹L'),
so one step is k <- k - 1/tr X with L X = L'.  The trace is exact (one
multi right-hand-side solve) for moderate sizes and a Hutchinson estimate
with Rademacher probes for large graphs.  Converged roots are deduplicated,
and the nullspace of L at each root gives eigenvectors and multiplicity.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import eigsh, splu
from tqdm import tqdm

from core.errors import NoRootsFound, OutOfRange, PoleAt, SingularAt
from core.graph import MetricGraph, edge_mass_matrix, kirchhoff_residual
from core.models import EigenMode, SeedRecord, SolverConfig, Spectrum, SpiderSpec
from spectral.secular import DENSE_LIMIT, GraphSecularOperator, RadialSecularOperator

logger = logging.getLogger(__name__)

# below this |step| (relative to max(1, k)) Newton is in its asymptotic regime
# and the multiplicity estimate from successive steps is trusted
ACCELERATION_WINDOW = 1e-3
MAX_MULTIPLICITY = 64
REFINE_STEPS = 6
# missing roots are bisected by eigenvalue count down to this relative width
BRACKET_TOL = 1e-6

Bounds = Tuple[float, float, bool, bool]


@dataclass(slots=True)
class TraceEstimate:
    mean: float
    variance: float  # sample variance of the per-probe quadratic forms
    probes: int

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.variance / self.probes)) if self.probes > 1 else 0.0


def hutchinson_trace(X: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]], m: int,
                     rng_seed: Union[int, np.random.SeedSequence] = 0,
                     n: Optional[int] = None) -> TraceEstimate:
    """(1/m) Σ uᵢᵀ X uᵢ with Rademacher probes uᵢ.

    ``X`` is a square array or a callable applying X to an (n, m) block.
    """
    if callable(X):
        if n is None:
            raise ValueError("n is required when X is given as an operator")
        apply = X
    else:
        n = X.shape[0]
        apply = X.__matmul__
    rng = np.random.default_rng(rng_seed)
    U = rng.integers(0, 2, size=(n, m)).astype(float) * 2.0 - 1.0
    samples = np.einsum("ij,ij->j", U, apply(U))
    variance = float(samples.var(ddof=1)) if m > 1 else 0.0
    return TraceEstimate(float(samples.mean()), variance, m)


# ----------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------
def _factorize(L, k: float) -> Callable[[np.ndarray], np.ndarray]:
    if sparse.issparse(L):
        try:
            lu = splu(sparse.csc_matrix(L))
        except RuntimeError as e:
            raise SingularAt(k) from e
        return lu.solve
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(L, check_finite=False)
    diag = np.diag(lu)
    if np.any(diag == 0.0) or not np.all(np.isfinite(diag)):
        raise SingularAt(k)
    return lambda B: linalg.lu_solve((lu, piv), B, check_finite=False)


def _as_operator(target, boundary: str = "clamped", config: Optional[SolverConfig] = None):
    if isinstance(target, MetricGraph):
        pole_tol = config.pole_tol if config is not None else 1e-10
        return GraphSecularOperator(target, boundary, pole_tol=pole_tol)
    return target


def trace_of_x(operator, k: float, trace_mode: str = "exact", probes: int = 30,
               rng_seed: Union[int, np.random.SeedSequence] = 0) -> TraceEstimate:
    """tr(L⁻¹ L') at k, exactly or by Hutchinson."""
    sm = operator.matrices(k)
    solve = _factorize(sm.L, k)
    dL = sm.dL
    if trace_mode == "exact":
        rhs = dL.toarray() if sparse.issparse(dL) else dL
        X = solve(rhs)
        return TraceEstimate(float(np.trace(X)), 0.0, 0)
    # uᵀ L⁻¹ L' u, one solve L x = L' u per probe block
    return hutchinson_trace(lambda U: solve(dL @ U), probes, rng_seed, n=sm.size)


def newton_step(target, k: float, boundary: str = "clamped", trace_mode: str = "exact",
                probes: int = 30, rng_seed: Union[int, np.random.SeedSequence] = 0) -> float:
    """One Newton update k - 1/tr X for a graph (with boundary) or an operator."""
    operator = _as_operator(target, boundary)
    estimate = trace_of_x(operator, k, trace_mode, probes, rng_seed)
    return k - 1.0 / estimate.mean


# ----------------------------------------------------------------------------
# seeding and polishing
# ----------------------------------------------------------------------------
def seed_grid(config: SolverConfig, lengths: np.ndarray) -> np.ndarray:
    n = max(2, int(np.ceil(config.seed_density * (config.k_max - config.k_min))) + 1)
    seeds = np.linspace(config.k_min, config.k_max, n)
    keep = np.ones(n, dtype=bool)
    for ell in np.unique(np.round(lengths, 14)):
        # distance of k*l to the nearest multiple of pi, in units of k
        dist = np.abs(seeds * ell - np.pi * np.round(seeds * ell / np.pi)) / ell
        keep &= dist > config.pole_exclusion
    return seeds[keep]


def pole_intervals(operator, config: SolverConfig) -> List[Bounds]:
    """Pole-free pieces of [k_min, k_max] as (lo, hi, lo_is_pole, hi_is_pole)."""
    eps = config.pole_exclusion
    poles = operator.poles(max(config.k_min - eps, eps), config.k_max + eps)
    inner = [p for p in poles if config.k_min + eps < p < config.k_max - eps]
    lo_pole = any(abs(p - config.k_min) <= eps for p in poles)
    hi_pole = any(abs(p - config.k_max) <= eps for p in poles)
    edges = [config.k_min, *inner, config.k_max]
    flags = [lo_pole, *([True] * len(inner)), hi_pole]
    return list(zip(edges[:-1], edges[1:], flags[:-1], flags[1:]))


def newton_bounds(config: SolverConfig, interval: Optional[Bounds] = None) -> Bounds:
    """(lo, hi, lo_hard, hi_hard) for one Newton run.

    Poles are hard walls; the window ends get a 5% margin and stay above 0.
    """
    span = config.k_max - config.k_min
    soft_lo = max(config.k_min - 0.05 * span, 0.5 * config.k_min)
    soft_hi = config.k_max + 0.05 * span
    if interval is None:
        return soft_lo, soft_hi, False, False
    lo, hi, lo_pole, hi_pole = interval
    return (lo if lo_pole else soft_lo, hi if hi_pole else soft_hi, lo_pole, hi_pole)


def _polish(operator, seed: float, index: int, config: SolverConfig, trace_mode: str,
            bounds: Optional[Bounds] = None) -> SeedRecord:
    k = float(seed)
    prev_step = None
    multiplicity = 1.0
    lo, hi, lo_hard, hi_hard = bounds if bounds is not None else newton_bounds(config)

    for it in range(1, config.max_iter + 1):
        ss = np.random.SeedSequence([config.rng_seed, index, it])
        try:
            tr = trace_of_x(operator, k, trace_mode, config.probe_count, ss).mean
        except SingularAt:
            return SeedRecord(seed, k, it, "singular", 0.0)
        except PoleAt:
            return SeedRecord(seed, k, it, "pole")
        except OutOfRange:
            return SeedRecord(seed, k, it, "escaped")
        if tr == 0.0 or not np.isfinite(tr):
            return SeedRecord(seed, k, it, "escaped")

        step = -1.0 / tr
        scale = max(1.0, abs(k))
        if prev_step is not None and abs(step) < ACCELERATION_WINDOW * scale:
            ratio = step / prev_step
            if abs(ratio) > 0.3 and ratio < 1.0:
                estimate = round(multiplicity / (1.0 - ratio))
                multiplicity = float(min(max(estimate, 1), MAX_MULTIPLICITY))
        prev_step = step

        update = multiplicity * step
        k_new = k + update
        if k_new <= lo or k_new >= hi:
            wall_hard = hi_hard if k_new >= hi else lo_hard
            if not wall_hard:
                return SeedRecord(seed, k_new, it, "escaped", abs(update))
            # never jump a pole: go half way to it and restart the estimate
            k_new = 0.5 * (k + (hi if k_new >= hi else lo))
            update = k_new - k
            multiplicity, prev_step = 1.0, None
        elif abs(update) < config.newton_tol * scale:
            return SeedRecord(seed, k_new, it, "converged", abs(update))
        k = k_new

    return SeedRecord(seed, k, config.max_iter, "max_iter", abs(prev_step or np.nan))


def _cluster(records: List[SeedRecord], config: SolverConfig) -> List[float]:
    good = sorted(
        (r for r in records if r.status in ("converged", "singular") and config.k_min <= r.k <= config.k_max),
        key=lambda r: r.k,
    )
    roots: List[float] = []
    group: List[SeedRecord] = []
    for rec in good:
        if group and rec.k - group[0].k > config.dedup_tol:
            roots.append(min(group, key=lambda r: r.last_step).k)
            group = []
        group.append(rec)
    if group:
        roots.append(min(group, key=lambda r: r.last_step).k)
    return roots


# ----------------------------------------------------------------------------
# nullspace
# ----------------------------------------------------------------------------
def _small_eigenpairs(L, nev: int, seed: int):
    """Eigenpairs of L closest to zero, sorted by |λ|, plus max |λ|."""
    n = L.shape[0]
    if not sparse.issparse(L) or n <= nev + 2:
        dense = L.toarray() if sparse.issparse(L) else L
        vals, vecs = linalg.eigh(dense)
        order = np.argsort(np.abs(vals))[:nev]
        return vals[order], vecs[:, order], float(np.max(np.abs(vals)))
    scale = float(abs(L.diagonal()).max()) or 1.0
    # ARPACK starts from a random vector unless v0 is pinned
    v0 = np.random.default_rng(seed).standard_normal(n)
    vals, vecs = eigsh(L, k=nev, sigma=-1e-9 * scale, which="LM", v0=v0)
    sigma_max = float(abs(eigsh(L, k=1, which="LM", v0=v0, return_eigenvectors=False)[0]))
    order = np.argsort(np.abs(vals))
    return vals[order], vecs[:, order], sigma_max


def _refine_root(operator, k: float, config: SolverConfig, nev: int) -> float:
    """Hellmann-Feynman polish of a possibly degenerate root.

    The near-zero eigenvalues of L(k) all cross zero at the root; their mean
    over the mean slope vᵀL'v gives the update.
    """
    for _ in range(REFINE_STEPS):
        sm = operator.matrices(k)
        vals, vecs, _ = _small_eigenpairs(sm.L, nev, config.rng_seed)
        cut = max(1e3 * abs(vals[0]), np.finfo(float).tiny)
        null = vals[np.abs(vals) <= cut]
        v = vecs[:, : null.size]
        slope = np.mean(np.einsum("ij,ij->j", v, sm.dL @ v))
        if slope == 0.0:
            break
        dk = -np.mean(null) / slope
        k += dk
        if abs(dk) < config.newton_tol * max(1.0, abs(k)):
            break
    return k


def _nullspace(operator, k: float, config: SolverConfig):
    """(basis columns in operator coordinates, singular values) or None."""
    sm = operator.matrices(k)
    if not sm.is_sparse:
        _, s, vt = linalg.svd(sm.L)
        null = s < config.nullspace_tol * s[0]
        if not null.any():
            return None, sm
        return vt[null].T, sm

    nev = min(12, sm.size - 2)
    while True:
        vals, vecs, sigma_max = _small_eigenpairs(sm.L, nev, config.rng_seed)
        null = np.abs(vals) < config.nullspace_tol * sigma_max
        if not null.all() or nev >= min(MAX_MULTIPLICITY, sm.size - 2):
            break
        nev = min(2 * nev, sm.size - 2)
    if not null.any():
        return None, sm
    return vecs[:, null], sm


def _orthonormalize(operator, k: float, vectors: np.ndarray, quad_order: int, pole_tol: float) -> np.ndarray:
    full = np.column_stack([operator.embed(v) for v in vectors.T])
    graph = operator.graph
    if graph is None:
        q, _ = np.linalg.qr(full)
        basis = q
    else:
        M = edge_mass_matrix(graph, k, quad_order, pole_tol)
        gram = full.T @ (M @ full)
        w, V = linalg.eigh(0.5 * (gram + gram.T))
        basis = full @ (V / np.sqrt(w)) @ V.T
    for i in range(basis.shape[1]):
        col = basis[:, i]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, i] = -col
    return basis


def _make_mode(operator, k: float, config: SolverConfig) -> Optional[EigenMode]:
    vectors, sm = _nullspace(operator, k, config)
    if vectors is None:
        logger.debug("k=%.12g rejected: L(k) not numerically singular", k)
        return None
    basis = _orthonormalize(operator, k, vectors, config.quad_order, config.pole_tol)

    residual = 0.0
    kirchhoff = 0.0
    for col in basis.T:
        reduced = col[sm.active] if operator.graph is not None else col
        scale = float(np.max(np.abs(reduced))) or 1.0
        residual = max(residual, float(np.max(np.abs(sm.L @ reduced))) / scale)
        if operator.graph is not None:
            mode = EigenMode(k, col, 1)
            kirchhoff = max(kirchhoff, kirchhoff_residual(operator.graph, mode, operator.boundary, config.pole_tol))

    if residual > config.certificate_tol or kirchhoff > config.certificate_tol:
        logger.warning("k=%.12g failed certificate (residual %.2e, kirchhoff %.2e)", k, residual, kirchhoff)
        return None
    return EigenMode(k=float(k), f_V=basis[:, 0].copy(), multiplicity=int(basis.shape[1]),
                     basis=[basis[:, i].copy() for i in range(basis.shape[1])],
                     residual=residual, kirchhoff=kirchhoff)


# ----------------------------------------------------------------------------
# completeness by eigenvalue count
# ----------------------------------------------------------------------------
def negative_count(operator, k: float) -> int:
    """Negative eigenvalues of L(k).

    L'(k) is negative semidefinite, so between two poles every eigenvalue of
    L decreases and the count rises by the multiplicity at each root.
    """
    L = operator.matrices(k).dense()[0]
    return int(np.count_nonzero(linalg.eigvalsh(L) < 0.0))


def _root_in_bracket(operator, lo: float, hi: float, n_lo: int, index: int,
                     config: SolverConfig) -> float:
    record = _polish(operator, 0.5 * (lo + hi), index, config, "exact", (lo, hi, True, True))
    if record.status == "converged":
        return record.k
    tol = config.newton_tol * max(1.0, hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if negative_count(operator, mid) > n_lo:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _missing_roots(operator, lo: float, hi: float, known: List[Tuple[float, int]],
                   config: SolverConfig, index: int) -> List[float]:
    """Roots in (lo, hi] that the count sees but ``known`` does not hold."""
    def inside(a: float, b: float) -> int:
        return sum(mult for k, mult in known if a < k <= b)

    n_lo, n_hi = negative_count(operator, lo), negative_count(operator, hi)
    if n_hi - n_lo <= inside(lo, hi):
        return []
    logger.debug("(%.9g, %.9g]: count %d, found %d", lo, hi, n_hi - n_lo, inside(lo, hi))
    width_tol = BRACKET_TOL * max(1.0, hi)
    roots: List[float] = []
    stack = [(lo, hi, n_lo, n_hi)]
    while stack:
        a, b, n_a, n_b = stack.pop()
        if n_b - n_a <= inside(a, b):
            continue
        if b - a > width_tol:
            mid = 0.5 * (a + b)
            n_mid = negative_count(operator, mid)
            stack.append((mid, b, n_mid, n_b))
            stack.append((a, mid, n_a, n_mid))
            continue
        roots.append(_root_in_bracket(operator, a, b, n_a, index + len(roots), config))
    return roots


def _fill_gaps(operator, modes: List[EigenMode], config: SolverConfig, first_index: int) -> List[EigenMode]:
    """Recover roots the seed sweep missed, pole interval by pole interval."""
    eps = config.pole_exclusion
    known = [(m.k, m.multiplicity) for m in modes]
    extra: List[EigenMode] = []
    index = first_index
    for lo, hi, lo_pole, hi_pole in pole_intervals(operator, config):
        a = lo + eps if lo_pole else lo
        b = hi - eps if hi_pole else hi
        if b <= a:
            continue
        for k in _missing_roots(operator, a, b, known, config, index):
            index += 1
            mode = _make_mode(operator, k, config)
            if mode is None or any(abs(mode.k - kk) <= config.dedup_tol for kk, _ in known):
                continue
            known.append((mode.k, mode.multiplicity))
            extra.append(mode)
    if extra:
        logger.info("count check recovered %d roots (multiplicity %d) missed by the seeds",
                    len(extra), sum(m.multiplicity for m in extra))
    return sorted(modes + extra, key=lambda m: m.k)


def solve_spectrum(target, config: SolverConfig, boundary: str = "clamped",
                   progress: bool = False) -> Spectrum:
    """Sweep seeds over [k_min, k_max], polish, deduplicate, certify and check the count."""
    config.validate()
    operator = _as_operator(target, boundary, config)
    trace_mode = config.resolve_trace_mode(operator.size)
    seeds = seed_grid(config, operator.lengths)
    intervals = pole_intervals(operator, config)
    starts = np.array([iv[0] for iv in intervals])
    logger.info("solving |L|=%d on [%g, %g]: %d seeds, %d pole intervals, %s trace",
                operator.size, config.k_min, config.k_max, len(seeds), len(intervals), trace_mode)

    def work(item):
        index, seed = item
        interval = intervals[max(0, int(np.searchsorted(starts, seed, side="right")) - 1)]
        return _polish(operator, seed, index, config, trace_mode, newton_bounds(config, interval))

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        records = list(tqdm(pool.map(work, enumerate(seeds)), total=len(seeds),
                            desc="newton", disable=not progress, leave=False))

    roots = _cluster(records, config)
    sparse_path = getattr(operator, "use_sparse", False)
    modes: List[EigenMode] = []
    for k in roots:
        if trace_mode == "stochastic" or sparse_path:
            k = _refine_root(operator, k, config, nev=max(1, min(12, operator.size - 2)))
        mode = _make_mode(operator, k, config)
        if mode is None:
            continue
        if modes and mode.k - modes[-1].k <= config.dedup_tol:
            continue  # refinement merged two clusters
        modes.append(mode)

    if config.count_check and operator.size <= DENSE_LIMIT:
        modes = _fill_gaps(operator, modes, config, len(seeds))
    elif config.count_check:
        logger.debug("count check skipped: |L|=%d above the dense limit", operator.size)

    if not modes:
        raise NoRootsFound(
            f"no certified roots in [{config.k_min}, {config.k_max}]",
            statuses=_status_counts(records),
        )

    escaped = sum(1 for r in records if r.status in ("escaped", "max_iter"))
    if escaped:
        logger.debug("%d of %d seeds escaped or hit the iteration cap", escaped, len(records))

    return Spectrum(
        modes=modes,
        pole_candidates=operator.poles(config.k_min, config.k_max),
        diagnostics=records,
        boundary=getattr(operator, "boundary", boundary),
        trace_mode=trace_mode,
        rng_seed=config.rng_seed,
    )


def _status_counts(records: Iterable[SeedRecord]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for rec in records:
        counts[rec.status] = counts.get(rec.status, 0) + 1
    return counts


# ----------------------------------------------------------------------------
# spider sectors
# ----------------------------------------------------------------------------
def sector_multiplicity(M: int, m: int) -> int:
    """Real Fourier sectors: m and M - m coincide, so 0 < m < M/2 is doubled."""
    return 1 if m == 0 or 2 * m == M else 2


def solve_spider_sectors(spec: SpiderSpec, config: SolverConfig,
                         m_values: Optional[Sequence[int]] = None) -> Dict[int, Spectrum]:
    m_values = range(spec.M // 2 + 1) if m_values is None else m_values
    sectors: Dict[int, Spectrum] = {}
    for m in m_values:
        try:
            sectors[int(m)] = solve_spectrum(RadialSecularOperator(spec, int(m), config.pole_tol), config)
        except NoRootsFound:
            logger.debug("sector m=%d has no roots in range", m)
    return sectors


def merge_sector_spectra(spec: SpiderSpec, sectors: Dict[int, Spectrum], dedup_tol: float) -> Spectrum:
    """Union of sector spectra with real-Fourier multiplicities."""
    items = sorted(
        ((mode.k, mode.multiplicity * sector_multiplicity(spec.M, m), mode) for m, s in sectors.items() for mode in s.modes),
        key=lambda t: t[0],
    )
    modes: List[EigenMode] = []
    for k, mult, mode in items:
        if modes and k - modes[-1].k <= dedup_tol:
            modes[-1].multiplicity += mult
            continue
        modes.append(EigenMode(k, mode.f_V, mult, list(mode.basis), mode.residual, 0.0))
    return Spectrum(modes=modes, boundary="clamped" if spec.clamped else "free")


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------
def spectrum_to_dict(spectrum: Spectrum, include_vectors: bool = True) -> dict:
    return {
        "trace_mode": spectrum.trace_mode,
        "rng_seed": spectrum.rng_seed,
        "boundary": spectrum.boundary,
        "pole_candidates": list(spectrum.pole_candidates),
        "seed_status": spectrum.status_counts(),
        "modes": [
            {
                "k": mode.k,
                "multiplicity": mode.multiplicity,
                "residual": mode.residual,
                "kirchhoff": mode.kirchhoff,
                **({"f_V": [np.asarray(b).tolist() for b in mode.basis]} if include_vectors else {}),
            }
            for mode in spectrum.modes
        ],
    }


def spectrum_from_dict(data: dict) -> Spectrum:
    modes = []
    for item in data["modes"]:
        basis = [np.asarray(v, dtype=float) for v in item.get("f_V", [])]
        modes.append(EigenMode(
            k=float(item["k"]),
            f_V=basis[0] if basis else np.zeros(0),
            multiplicity=int(item["multiplicity"]),
            basis=basis,
            residual=float(item.get("residual", 0.0)),
            kirchhoff=float(item.get("kirchhoff", 0.0)),
        ))
    return Spectrum(
        modes=modes,
        pole_candidates=[float(k) for k in data.get("pole_candidates", [])],
        boundary=data.get("boundary", "clamped"),
        trace_mode=data.get("trace_mode", "exact"),
        rng_seed=int(data.get("rng_seed", 0)),
    )
