"""The k-dependent vertex matrix L(k) and its derivative.

L(k)_vv = sum_{e ~ v} cot(k l_e), L(k)_vw = -csc(k l_vw) for adjacent v, w.
Clamped vertices are removed (rows and columns), free vertices stay.

Also here: the equilateral correspondence diagnostic and the radial
reduction of spider webs, which produces a small tridiagonal system per
angular mode m.  Both the full graph system and the radial sectors are
exposed to the eigensolver through the same operator interface
(``size``, ``matrices(k)``, ``poles(k_min, k_max)``, ``embed(vec)``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg, sparse

from core.errors import InvalidSpec, NotEquilateral, OutOfRange, PoleAt
from core.graph import POLE_TOL, MetricGraph
from core.models import BOUNDARY_KINDS, SpiderSpec

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000

Matrix = Union[np.ndarray, sparse.csr_matrix]


@dataclass(slots=True, frozen=True)
class SecularMatrix:
    k: float
    L: Matrix
    dL: Matrix
    active: np.ndarray  # rows of the full vertex set kept in L
    boundary: str = "clamped"

    @property
    def size(self) -> int:
        return int(self.L.shape[0])

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.L)

    def dense(self):
        if self.is_sparse:
            return self.L.toarray(), self.dL.toarray()
        return self.L, self.dL


def _pole_edges(lengths: np.ndarray, k: float, pole_tol: float) -> np.ndarray:
    return np.flatnonzero(np.abs(np.sin(k * lengths)) < pole_tol)


def pole_candidates(lengths: np.ndarray, k_min: float, k_max: float) -> list:
    """Sorted n*pi/l in [k_min, k_max] over the distinct edge lengths."""
    poles = set()
    for ell in np.unique(np.round(np.asarray(lengths, dtype=float), 14)):
        n_lo = max(1, int(np.ceil(k_min * ell / np.pi)))
        n_hi = int(np.floor(k_max * ell / np.pi))
        for n in range(n_lo, n_hi + 1):
            poles.add(float(n * np.pi / ell))
    return sorted(poles)


def active_vertices(graph: MetricGraph, boundary: str) -> np.ndarray:
    if boundary not in BOUNDARY_KINDS:
        raise InvalidSpec(f"unknown boundary condition {boundary!r}")
    if boundary == "free":
        return np.arange(graph.n_vertices)
    return np.flatnonzero(~graph.boundary_mask)


def assemble(graph: MetricGraph, k: float, boundary: str = "clamped", *,
             pole_tol: float = POLE_TOL, use_sparse: Optional[bool] = None) -> SecularMatrix:
    if k <= 0:
        raise OutOfRange(f"secular matrix needs k > 0, got {k}")
    lengths = graph.lengths
    bad = _pole_edges(lengths, k, pole_tol)
    if bad.size:
        raise PoleAt(k, bad)

    s = np.sin(k * lengths)
    c = np.cos(k * lengths)
    cot, csc = c / s, 1.0 / s
    d_cot = -lengths * csc * csc
    d_off = lengths * csc * cot  # d/dk of -csc

    n = graph.n_vertices
    t, h = graph.tails, graph.heads
    diag = np.zeros(n)
    ddiag = np.zeros(n)
    np.add.at(diag, t, cot)
    np.add.at(diag, h, cot)
    np.add.at(ddiag, t, d_cot)
    np.add.at(ddiag, h, d_cot)

    active = active_vertices(graph, boundary)
    if use_sparse is None:
        use_sparse = active.size > DENSE_LIMIT

    rows = np.concatenate([t, h])
    cols = np.concatenate([h, t])
    if use_sparse:
        idx = np.arange(n)
        L = sparse.coo_matrix((np.concatenate([-csc, -csc, diag]),
                               (np.concatenate([rows, idx]), np.concatenate([cols, idx]))),
                              shape=(n, n)).tocsr()
        dL = sparse.coo_matrix((np.concatenate([d_off, d_off, ddiag]),
                                (np.concatenate([rows, idx]), np.concatenate([cols, idx]))),
                               shape=(n, n)).tocsr()
        if active.size != n:
            L = L[active][:, active]
            dL = dL[active][:, active]
        return SecularMatrix(k, L.tocsc(), dL.tocsc(), active, boundary)

    L = np.zeros((n, n))
    dL = np.zeros((n, n))
    L[rows, cols] = np.concatenate([-csc, -csc])
    dL[rows, cols] = np.concatenate([d_off, d_off])
    L[np.diag_indices(n)] = diag
    dL[np.diag_indices(n)] = ddiag
    if active.size != n:
        L = L[np.ix_(active, active)]
        dL = dL[np.ix_(active, active)]
    return SecularMatrix(k, L, dL, active, boundary)


class GraphSecularOperator:
    """L(k) of a metric graph with a fixed boundary condition."""

    def __init__(self, graph: MetricGraph, boundary: str = "clamped", *,
                 pole_tol: float = POLE_TOL, use_sparse: Optional[bool] = None):
        self.graph = graph
        self.boundary = boundary
        self.pole_tol = pole_tol
        self.active = active_vertices(graph, boundary)
        self.use_sparse = self.active.size > DENSE_LIMIT if use_sparse is None else use_sparse

    @property
    def size(self) -> int:
        return int(self.active.size)

    @property
    def lengths(self) -> np.ndarray:
        return self.graph.lengths

    def matrices(self, k: float) -> SecularMatrix:
        return assemble(self.graph, k, self.boundary, pole_tol=self.pole_tol, use_sparse=self.use_sparse)

    def poles(self, k_min: float, k_max: float) -> list:
        return pole_candidates(self.lengths, k_min, k_max)

    def embed(self, vec: np.ndarray) -> np.ndarray:
        full = np.zeros(self.graph.n_vertices)
        full[self.active] = vec
        return full


# ----------------------------------------------------------------------------
# equilateral correspondence
# ----------------------------------------------------------------------------
def equilateral_correspondence(graph: MetricGraph, k: float, pole_tol: float = POLE_TOL) -> float:
    """min over λ in σ(D^-1 (A - D)) of |-2 sin²(kℓ/2) - λ|."""
    if not graph.is_equilateral():
        raise NotEquilateral(f"edge lengths span [{graph.lengths.min()}, {graph.lengths.max()}]")
    ell = float(graph.lengths[0])
    if abs(np.sin(k * ell)) < pole_tol:
        raise PoleAt(k, range(graph.n_edges))
    n = graph.n_vertices
    A = np.zeros((n, n))
    A[graph.tails, graph.heads] = 1.0
    A[graph.heads, graph.tails] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(graph.degrees)
    # D^-1 A - I is similar to D^-1/2 A D^-1/2 - I, which is symmetric
    sym = inv_sqrt_deg[:, None] * A * inv_sqrt_deg[None, :]
    lam = linalg.eigvalsh(sym) - 1.0
    target = -2.0 * np.sin(0.5 * k * ell) ** 2
    return float(np.min(np.abs(target - lam)))


# ----------------------------------------------------------------------------
# spider web radial reduction
# ----------------------------------------------------------------------------
def spider_radial_system(spec: SpiderSpec, m: int, k: float,
                         pole_tol: float = POLE_TOL) -> SecularMatrix:
    """Tridiagonal system of angular mode m over the ring index.

    Row of ring r (radius r_i, neighbours at r_i ± dr_±, chord r_i·dσ with
    dσ = 2 sin(dθ/2)):

        [2(cot(k r dσ) - cos(m dθ) csc(k r dσ)) + cot(k dr_-) + cot(k dr_+)] F(r)
            - csc(k dr_-) F(r - dr_-) - csc(k dr_+) F(r + dr_+) = 0

    The centre closure sums e^{imθ} over the M spokes.  For m ≡ 0 (mod M) that
    sum is M, every spoke sees the same F(r_1), and the centre value F(0) is an
    unknown with the row cot(k r_1) F(0) - csc(k r_1) F(r_1) = 0.  Otherwise the
    sum vanishes, the closure reads F(0) cot(k r_1) = 0 and the centre is
    dropped.
    """
    from spectral.builders import spider_radii

    if k <= 0:
        raise OutOfRange(f"radial system needs k > 0, got {k}")
    M = spec.M
    if abs(m) > M:
        raise InvalidSpec(f"|m|={abs(m)} exceeds M={M}")
    radii = spider_radii(spec)
    dtheta = spec.dtheta
    dsigma = 2.0 * np.sin(0.5 * dtheta)
    n_rings = len(radii)
    last = n_rings - 1 if spec.clamped else n_rings  # unknown rings 1..last
    if last < 1:
        raise InvalidSpec("radial system has no unknown rings")

    inner = np.concatenate([[radii[0]], np.diff(radii)])  # dr_- per ring (centre edge first)
    chords = radii * dsigma
    lengths = np.concatenate([inner, chords])
    bad = _pole_edges(lengths, k, pole_tol)
    if bad.size:
        raise PoleAt(k, bad)

    def cot(x):
        return np.cos(x) / np.sin(x)

    def csc(x):
        return 1.0 / np.sin(x)

    cos_m = np.cos(m * dtheta)
    with_centre = m % M == 0
    offset = 1 if with_centre else 0
    size = last + offset
    L = np.zeros((size, size))
    dL = np.zeros((size, size))

    if with_centre:
        a = radii[0]
        L[0, 0] = cot(k * a)
        dL[0, 0] = -a * csc(k * a) ** 2

    for i in range(last):  # ring i (0-based) -> row i + offset
        row = i + offset
        r, dr_in, c = radii[i], inner[i], chords[i]
        L[row, row] = 2.0 * (cot(k * c) - cos_m * csc(k * c)) + cot(k * dr_in)
        dL[row, row] = (2.0 * (-c * csc(k * c) ** 2 + cos_m * c * csc(k * c) * cot(k * c))
                        - dr_in * csc(k * dr_in) ** 2)
        if i + 1 < n_rings:
            dr_out = inner[i + 1]
            L[row, row] += cot(k * dr_out)
            dL[row, row] += -dr_out * csc(k * dr_out) ** 2
            if i + 1 < last:
                L[row, row + 1] = L[row + 1, row] = -csc(k * dr_out)
                dL[row, row + 1] = dL[row + 1, row] = dr_out * csc(k * dr_out) * cot(k * dr_out)
        if i == 0 and with_centre:
            L[row, 0] = L[0, row] = -csc(k * dr_in)
            dL[row, 0] = dL[0, row] = dr_in * csc(k * dr_in) * cot(k * dr_in)

    active = np.arange(size)
    return SecularMatrix(k, L, dL, active, "clamped" if spec.clamped else "free")


class RadialSecularOperator:
    """One angular sector of a spider web as an eigensolver operator."""

    graph = None

    def __init__(self, spec: SpiderSpec, m: int, pole_tol: float = POLE_TOL):
        from spectral.builders import spider_radii

        self.spec = spec
        self.m = m
        self.pole_tol = pole_tol
        radii = spider_radii(spec)
        dsigma = 2.0 * np.sin(0.5 * spec.dtheta)
        self._lengths = np.concatenate([[radii[0]], np.diff(radii), radii * dsigma])
        last = len(radii) - 1 if spec.clamped else len(radii)
        self._size = last + (1 if m % spec.M == 0 else 0)

    @property
    def size(self) -> int:
        return self._size

    @property
    def lengths(self) -> np.ndarray:
        return self._lengths

    def matrices(self, k: float) -> SecularMatrix:
        return spider_radial_system(self.spec, self.m, k, self.pole_tol)

    def poles(self, k_min: float, k_max: float) -> list:
        return pole_candidates(self._lengths, k_min, k_max)

    def embed(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=float)
