"""First-order degenerate perturbation theory for near-homogeneous sphere graphs.

Sign convention: eigenvalues are λ = -k² throughout.  The leading level is
λ⁽⁰⁾_j = -j(j+1)/d with d = 2, each (2j+1)-fold level splits into
λ⁽⁰⁾_j + λ⁽¹⁾_jm, and the prediction compared with the graph is
k_pred = sqrt(-λ⁽⁰⁾_j - λ⁽¹⁾_jm).

The corrections solve A u = λ⁽¹⁾ B u with

    A_ij = Σ_v w_v [∇Y_i·R(v)·∇Y_j + λ⁽⁰⁾ tr_t R(v) Y_i Y_j]
    B_ij = -c (d r₀/|Ω|) ∫ Y_i Y_j

where tr_t is the trace of R projected onto the tangent plane and c is
either 2j+1 (the degeneracy-weighted form) or 1.  Also here: the exact
spectrum of the truncated icosahedron from its adjacency polynomial.
"""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from core.errors import InvalidSpec, SingularB
from core.graph import MetricGraph, gauss_legendre
from core.models import ContinuumField, PerturbationProblem, SplittingResult, Spectrum
from spectral.analytic import sphere_level
from spectral.continuum import continuum_field, tangent_part

logger = logging.getLogger(__name__)

SOCCER_BALL_EDGE = float(np.sqrt(2.0 / 109.0 * (29.0 - 9.0 * np.sqrt(5.0))))

# characteristic polynomial of the truncated icosahedron's adjacency matrix,
# as (numpy coefficients, highest degree first; multiplicity)
SOCCER_BALL_FACTORS: Tuple[Tuple[Tuple[float, ...], int], ...] = (
    ((1.0, -3.0), 1),
    ((1.0, -1.0), 9),
    ((1.0, 2.0), 4),
    ((1.0, -1.0, -3.0), 5),
    ((1.0, 1.0, -4.0), 4),
    ((1.0, 1.0, -1.0), 5),
    ((1.0, 3.0, 1.0), 3),
    ((1.0, -3.0, -2.0, 7.0, 1.0), 3),
)

SPHERE_QUAD_ORDER = 24


# ----------------------------------------------------------------------------
# soccer ball
# ----------------------------------------------------------------------------
def _factor_roots(coefs: Sequence[float]) -> np.ndarray:
    if len(coefs) == 2:
        return np.array([-coefs[1] / coefs[0]])
    if len(coefs) == 3:
        a, b, c = coefs
        disc = np.sqrt(b * b - 4.0 * a * c)
        return np.array([(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)])
    roots = np.roots(coefs)
    return np.sort(roots.real)


def soccer_ball_gammas() -> List[Tuple[float, int]]:
    """Adjacency eigenvalues γ with multiplicities, descending."""
    out = []
    for coefs, mult in SOCCER_BALL_FACTORS:
        out += [(float(g), mult) for g in _factor_roots(coefs)]
    return sorted(out, key=lambda t: -t[0])


def soccer_ball_exact_spectrum(ell: float = SOCCER_BALL_EDGE) -> List[Tuple[float, int]]:
    """(k, multiplicity) with k = arccos(γ/3)/ℓ, ascending; sums to 60."""
    return [(float(np.arccos(np.clip(g / 3.0, -1.0, 1.0)) / ell), mult) for g, mult in soccer_ball_gammas()]


# ----------------------------------------------------------------------------
# quadrature on S²
# ----------------------------------------------------------------------------
def sphere_quadrature(order: int = SPHERE_QUAD_ORDER) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in cos θ times the uniform rule in φ; weights sum to 4π.

    Exact for polynomials in (x, y, z) of degree < 2·order.
    """
    nodes, weights = gauss_legendre(order)
    z = 2.0 * nodes - 1.0
    wz = 2.0 * weights
    n_phi = 2 * order
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1.0 - zz ** 2)
    points = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    w = (wz[:, None] * np.full(n_phi, 2.0 * np.pi / n_phi)[None, :]).reshape(-1)
    return points, w


# ----------------------------------------------------------------------------
# problem assembly
# ----------------------------------------------------------------------------
def perturbation_problem(graph: MetricGraph, j: int, field: Optional[ContinuumField] = None) -> PerturbationProblem:
    """Level j on a sphere graph with the empirical vertex measure, w_v = 1/|V|."""
    if graph.domain.get("kind") != "sphere":
        raise InvalidSpec(f"perturbation needs a sphere graph, got domain {graph.domain.get('kind')!r}")
    if j < 0:
        raise InvalidSpec(f"level must be >= 0, got {j}")
    field = field if field is not None else continuum_field(graph, density="empirical")
    n = graph.n_vertices
    return PerturbationProblem(
        graph=graph, field=field, j=j, lambda0=-j * (j + 1) / 2.0,
        basis=sphere_level(j), weights=np.full(n, 1.0 / n),
        points=graph.positions / np.linalg.norm(graph.positions, axis=1, keepdims=True),
    )


def assemble_AB(problem: PerturbationProblem, degeneracy_factor: bool = False,
                quad_order: int = SPHERE_QUAD_ORDER) -> Tuple[np.ndarray, np.ndarray]:
    field = problem.field
    points = problem.points
    normals = field.normals if field.normals is not None else points
    tr_t = np.trace(tangent_part(field.R, normals), axis1=1, axis2=2)

    values = np.stack([mode(points) for mode in problem.basis], axis=1)  # (n, N)
    grads = np.stack([mode.gradient(points) for mode in problem.basis], axis=1)  # (n, N, 3)
    RG = np.einsum("vab,vjb->vja", field.R, grads)
    w = problem.weights
    A = np.einsum("v,via,vja->ij", w, grads, RG)
    A += problem.lambda0 * np.einsum("v,vi,vj->ij", w * tr_t, values, values)

    qp, qw = sphere_quadrature(quad_order)
    qv = np.stack([mode(qp) for mode in problem.basis], axis=1)
    gram = (qv * qw[:, None]).T @ qv
    factor = len(problem.basis) if degeneracy_factor else 1
    B = -factor * problem.d * field.r0 / field.omega_volume * gram
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def splittings(problem: PerturbationProblem, degeneracy_factor: bool = False) -> SplittingResult:
    A, B = assemble_AB(problem, degeneracy_factor)
    # B is negative definite; eigh wants a positive definite right-hand side
    negB = -B
    ev = linalg.eigvalsh(negB)
    if ev[0] <= 1e-14 * max(abs(ev[-1]), 1e-300):
        raise SingularB(f"B is not definite for level j={problem.j}", eigenvalues=ev.tolist())
    mu, U = linalg.eigh(A, negB)
    lambda1 = -mu
    order = np.argsort(lambda1)
    lambda1, U = lambda1[order], U[:, order]

    k2 = -problem.lambda0 - lambda1
    k_pred = np.where(k2 >= 0, np.sqrt(np.clip(k2, 0.0, None)), np.nan)
    bound = abs(problem.lambda0) / 2.0
    reliable = bool(np.all(np.abs(lambda1) < bound)) if problem.j > 0 else bool(np.all(np.abs(lambda1) < 1e-12))
    if not reliable:
        logger.warning("level j=%d: |λ1| reaches %.3g against |λ0|=%.3g, first order unreliable",
                       problem.j, float(np.max(np.abs(lambda1))), abs(problem.lambda0))
    return SplittingResult(problem.j, problem.lambda0, lambda1, U, k_pred, reliable)


# ----------------------------------------------------------------------------
# comparison with a computed spectrum
# ----------------------------------------------------------------------------
def observed_levels(spectrum: Spectrum, jmax: int, k_floor: float = 1e-8) -> Dict[int, np.ndarray]:
    """Computed k values (by multiplicity, ascending) assigned to j = 1, 2, ... in blocks of 2j+1."""
    ks = np.sort(spectrum.expanded_ks())
    ks = ks[ks > k_floor]
    levels: Dict[int, np.ndarray] = {}
    start = 0
    for j in range(1, jmax + 1):
        block = ks[start:start + 2 * j + 1]
        if block.size < 2 * j + 1:
            logger.warning("only %d computed modes left for level j=%d", block.size, j)
            break
        levels[j] = block
        start += 2 * j + 1
    return levels


def splitting_report(graph: MetricGraph, spectrum: Spectrum, jmax: int,
                     degeneracy_factor: bool = False) -> pd.DataFrame:
    """One row per (j, m_index): λ⁽⁰⁾, λ⁽¹⁾, k_pred, observed k and both errors."""
    field = continuum_field(graph, density="empirical")
    observed = observed_levels(spectrum, jmax)
    rows = []
    for j, k_obs in observed.items():
        result = splittings(perturbation_problem(graph, j, field), degeneracy_factor)
        k_tilde = np.sqrt(-result.lambda0)
        # both sides ascending in k
        order = np.argsort(result.k_pred)
        for m_index, (lam1, kp, ko) in enumerate(zip(result.lambda1[order], result.k_pred[order], k_obs)):
            rows.append({
                "j": j,
                "m_index": m_index,
                "lambda0": result.lambda0,
                "lambda1": float(lam1),
                "k_pred": float(kp),
                "k_observed": float(ko),
                "eta": float(abs(ko - k_tilde) / k_tilde),
                "eta_corrected": float(abs(ko - kp) / kp),
                "reliable": result.reliable,
            })
    return pd.DataFrame(rows, columns=["j", "m_index", "lambda0", "lambda1", "k_pred",
                                       "k_observed", "eta", "eta_corrected", "reliable"])


def level_errors(report: pd.DataFrame) -> pd.DataFrame:
    """Mean η_j without and with the first-order correction."""
    return report.groupby("j", as_index=False)[["eta", "eta_corrected"]].mean()
