"""Dispersion relations of periodic square lattices.

cardinal:  cos(kℓ) = (cos(kxℓ) + cos(kyℓ))/2
ordinal:   cos(√2kℓ) = cos(kxℓ) cos(kyℓ)
both:      sum of the two vertex conditions, solved by bracketing.

The closed forms are evaluated through half-angle sines so that small ℓ
keeps full relative precision: with sa = sin²(kxℓ/2), sb = sin²(kyℓ/2),
cardinal gives sin²(kℓ/2) = (sa + sb)/2 and ordinal gives
sin²(√2kℓ/2) = sa + sb - 2 sa sb.
"""
from __future__ import annotations

import logging
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from core.errors import InvalidSpec, NoSolutionInBranch
from core.graph import MetricGraph
from core.models import DispersionQuery
from spectral.secular import assemble

logger = logging.getLogger(__name__)

SCAN_POINTS = 4096


def _half_angle_terms(query: DispersionQuery):
    sa = np.sin(0.5 * query.kx * query.ell) ** 2
    sb = np.sin(0.5 * query.ky * query.ell) ** 2
    return sa, sb


def _cardinal(query: DispersionQuery) -> float:
    sa, sb = _half_angle_terms(query)
    s = np.sqrt(0.5 * (sa + sb))
    if s > 1.0:
        raise NoSolutionInBranch("cardinal relation has no real k", query=str(query))
    return float(2.0 * np.arcsin(s) / query.ell)


def _ordinal(query: DispersionQuery) -> float:
    sa, sb = _half_angle_terms(query)
    s2 = sa + sb - 2.0 * sa * sb
    if not 0.0 <= s2 <= 1.0:
        raise NoSolutionInBranch("ordinal relation has no real k", query=str(query))
    return float(2.0 * np.arcsin(np.sqrt(s2)) / (np.sqrt(2.0) * query.ell))


def combined_residual(k: float, query: DispersionQuery) -> float:
    """Plane-wave vertex condition of the cardinal + ordinal lattice, divided by 4.

    Cardinal edges contribute [4cos(kℓ) - 2(cos a + cos b)]/sin(kℓ) and ordinal
    edges [4cos(√2kℓ) - 4cos a cos b]/sin(√2kℓ); both are rewritten in
    half-angle sines.
    """
    ell = query.ell
    sa, sb = _half_angle_terms(query)
    c1 = k * ell
    c2 = np.sqrt(2.0) * k * ell
    cardinal = ((sa + sb) - 2.0 * np.sin(0.5 * c1) ** 2) / np.sin(c1)
    ordinal = 2.0 * ((sa + sb - 2.0 * sa * sb) - np.sin(0.5 * c2) ** 2) / np.sin(c2)
    return float(cardinal + ordinal)


def _combined(query: DispersionQuery) -> float:
    first_pole = np.pi / (np.sqrt(2.0) * query.ell)
    eps = first_pole * 1e-9
    grid = np.linspace(eps, first_pole * (1.0 - 1e-9), SCAN_POINTS)
    values = np.array([combined_residual(k, query) for k in grid])
    flips = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)
    if not flips.size:
        raise NoSolutionInBranch("combined relation has no root before the first pole", query=str(query))
    i = flips[0]
    return float(brentq(combined_residual, grid[i], grid[i + 1], args=(query,), xtol=1e-15, rtol=4 * np.finfo(float).eps))


def dispersion_k(query: DispersionQuery) -> float:
    """Smallest non-negative k on the first branch."""
    query.validate()
    if query.kx == 0 and query.ky == 0:
        return 0.0
    if query.connectivity == "cardinal":
        return _cardinal(query)
    if query.connectivity == "ordinal":
        return _ordinal(query)
    return _combined(query)


def spherical_triangle_cosines(query: DispersionQuery):
    """(cos c, cos a · cos b) for the ordinal relation, a = kxℓ, b = kyℓ, c = √2kℓ."""
    k = _ordinal(query)
    a, b, c = query.kx * query.ell, query.ky * query.ell, np.sqrt(2.0) * k * query.ell
    return float(np.cos(c)), float(np.cos(a) * np.cos(b))


def limit_defect(query: DispersionQuery) -> float:
    """|2k² - (kx² + ky²)|."""
    k = dispersion_k(query)
    return float(abs(2.0 * k * k - (query.kx ** 2 + query.ky ** 2)))


def verify_limit(connectivity: str, ells: Iterable[float], kx: float = 1.0, ky: float = 0.0) -> pd.DataFrame:
    """Defect of 2k² = kx² + ky² per ℓ with the ratio to the previous row."""
    rows = []
    prev: Optional[float] = None
    for ell in ells:
        query = DispersionQuery(connectivity, float(ell), kx, ky)
        k = dispersion_k(query)
        defect = abs(2.0 * k * k - (kx * kx + ky * ky))
        ratio = prev / defect if prev is not None and defect > 0 else np.nan
        rows.append({"ell": float(ell), "k": k, "defect": defect, "ratio": ratio})
        prev = defect
    return pd.DataFrame(rows, columns=["ell", "k", "defect", "ratio"])


def quantized_wavenumber(p: int, period: float) -> float:
    return 2.0 * np.pi * p / period


def cross_check_secular(graph: MetricGraph, query: DispersionQuery, phase: float = 0.3,
                        pole_tol: float = 1e-10) -> float:
    """max |L(k) f| for the plane wave f(v) = cos(kx x_v + ky y_v + phase) at the dispersion k."""
    if graph.domain.get("kind") != "torus":
        raise InvalidSpec("plane-wave check needs a periodic lattice")
    k = dispersion_k(query)
    if k == 0.0:
        return 0.0
    sm = assemble(graph, k, "free", pole_tol=pole_tol)
    x, y = graph.positions[:, 0], graph.positions[:, 1]
    f = np.cos(query.kx * x + query.ky * y + phase)
    residual = sm.L @ f
    return float(np.max(np.abs(residual)))
