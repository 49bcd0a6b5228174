"""Closed-form continuum eigenpairs (k̃, f̃) on the unit interval, square,
disc (spider-web operator) and sphere.

Conventions: every mode is a real function with unit continuum L² norm; the
continuum eigenvalue is -k̃², and the homogeneous isotropic operator is the
Laplacian divided by the manifold dimension d.

Real spherical harmonics are built from real solid harmonics in Racah
normalization without the Condon-Shortley phase:

    S_lm = N_lm Σ_tuv C^lm_tuv x^(2t+|m|-2(u+v)) y^(2(u+v)) z^(l-2t-|m|)

so that S_11 = x, S_1-1 = y, S_10 = z, and Y_lm = sqrt((2l+1)/4π) S_lm(x̂).
"""
from __future__ import annotations

import logging
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special
from scipy.optimize import brentq

from core.errors import BesselZeroNotFound, InvalidSpec
from core.graph import gauss_legendre
from core.models import AnalyticMode

logger = logging.getLogger(__name__)

ZERO_SCAN_STEP = 0.05
RADIAL_QUAD_ORDER = 64
FD_STEP = 1e-4


# ----------------------------------------------------------------------------
# Bessel functions
# ----------------------------------------------------------------------------
def bessel_j(nu: float, x):
    """Regular Bessel function J_ν of real order ν >= 0."""
    if nu < 0:
        raise InvalidSpec(f"Bessel order must be >= 0, got {nu}")
    return special.jv(nu, x)


def _mcmahon(nu: float, n: int) -> float:
    beta = (n + 0.5 * nu - 0.25) * np.pi
    mu = 4.0 * nu * nu
    return beta - (mu - 1.0) / (8.0 * beta) - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * (8.0 * beta) ** 3)


@lru_cache(maxsize=1024)
def bessel_zero(nu: float, n: int, polish: bool = True) -> float:
    """n-th positive zero ζ_{n,ν} of J_ν.

    The McMahon expansion sets the scan range; sign changes of J_ν on a fine
    grid bracket the zeros and Brent's method resolves them.
    """
    if nu < 0:
        raise InvalidSpec(f"Bessel order must be >= 0, got {nu}")
    if n < 1:
        raise InvalidSpec(f"zero index must be >= 1, got {n}")

    upper = max(_mcmahon(nu, n), nu + n * np.pi) + 2.0 * np.pi
    for _ in range(8):
        grid = np.arange(ZERO_SCAN_STEP, upper + ZERO_SCAN_STEP, ZERO_SCAN_STEP)
        values = special.jv(nu, grid)
        flips = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)
        exact = np.flatnonzero(values == 0.0)
        if flips.size + exact.size >= n:
            break
        upper *= 2.0
    else:
        raise BesselZeroNotFound(f"could not bracket zero {n} of J_{nu}", nu=nu, n=n)

    candidates = sorted([(grid[i], grid[i + 1]) for i in flips] + [(grid[i], grid[i]) for i in exact])
    a, b = candidates[n - 1]
    if a == b:
        return float(a)
    try:
        root = brentq(lambda x: special.jv(nu, x), a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    except (ValueError, RuntimeError) as e:
        raise BesselZeroNotFound(f"Brent failed for zero {n} of J_{nu}", nu=nu, n=n) from e
    if polish:
        for _ in range(3):
            slope = special.jvp(nu, root)
            if slope == 0.0:
                break
            step = special.jv(nu, root) / slope
            if not a <= root - step <= b:
                break
            root -= step
    return float(root)


# ----------------------------------------------------------------------------
# flat domains
# ----------------------------------------------------------------------------
def square_mode(m: int, n: int) -> AnalyticMode:
    """2 sin(mπx) sin(nπy), k̃ = (π/√2) sqrt(m² + n²)."""
    if m < 1 or n < 1:
        raise InvalidSpec(f"square modes need m, n >= 1, got ({m}, {n})")

    def f(points):
        return 2.0 * np.sin(m * np.pi * points[:, 0]) * np.sin(n * np.pi * points[:, 1])

    return AnalyticMode("square", (m, n), np.pi / np.sqrt(2.0) * np.hypot(m, n), f,
                        params={"d": 2})


def rect_mode(m: int, n: int, r: Tuple[float, float] = (1.0 / 3.0, 2.0 / 3.0)) -> AnalyticMode:
    """Anisotropic square, R ∝ diag(r₁, r₂) with r₁ + r₂ = 1: k̃² = π²(r₁m² + r₂n²)."""
    if m < 1 or n < 1:
        raise InvalidSpec(f"rect modes need m, n >= 1, got ({m}, {n})")
    r1, r2 = float(r[0]), float(r[1])
    if r1 <= 0 or r2 <= 0:
        raise InvalidSpec(f"anisotropy ratios must be positive, got {r}")
    r1, r2 = r1 / (r1 + r2), r2 / (r1 + r2)

    def f(points):
        return 2.0 * np.sin(m * np.pi * points[:, 0]) * np.sin(n * np.pi * points[:, 1])

    return AnalyticMode("rect", (m, n), np.pi * np.sqrt(r1 * m * m + r2 * n * n), f,
                        params={"r": (r1, r2)})


def interval_mode(n: int) -> AnalyticMode:
    if n < 1:
        raise InvalidSpec(f"interval modes need n >= 1, got {n}")

    def f(points):
        return np.sqrt(2.0) * np.sin(n * np.pi * points[:, 0])

    return AnalyticMode("interval", (n,), n * np.pi, f, params={"d": 1})


# ----------------------------------------------------------------------------
# spider web, ρ(r) = r/γ
# ----------------------------------------------------------------------------
def spider_order(gamma: float, m: int) -> float:
    """ν = sqrt(4γm² + 1)/2."""
    return 0.5 * np.sqrt(4.0 * gamma * m * m + 1.0)


def _radial_norm(profile, angular: float) -> float:
    nodes, weights = gauss_legendre(RADIAL_QUAD_ORDER)
    return float(np.sqrt(angular * np.sum(weights * profile(nodes) ** 2 * nodes)))


def spider_mode(gamma: float, m: int, n: int, parity: str = "cos") -> AnalyticMode:
    """Clamped spider-web mode with angular factor cos(mθ) or sin(mθ).

    m = 0: f = cos(sqrt(1+γ) k̃ r), k̃ = (2n+1)π / (2 sqrt(1+γ)), n >= 0.
    m >= 1: f = √r J_ν(sqrt(1+γ) k̃ r), k̃ = ζ_{n,ν}/sqrt(1+γ), n >= 1.
    """
    if gamma <= 0:
        raise InvalidSpec(f"gamma must be positive, got {gamma}")
    if m < 0:
        raise InvalidSpec(f"angular index must be >= 0, got {m}")
    if parity not in ("cos", "sin") or (m == 0 and parity == "sin"):
        raise InvalidSpec(f"invalid parity {parity!r} for m={m}")
    scale = np.sqrt(1.0 + gamma)

    if m == 0:
        if n < 0:
            raise InvalidSpec(f"m=0 spider modes need n >= 0, got {n}")
        k_tilde = (2 * n + 1) * np.pi / (2.0 * scale)
        nu = 0.5

        def radial(r):
            return np.cos(scale * k_tilde * r)
    else:
        if n < 1:
            raise InvalidSpec(f"spider modes with m >= 1 need n >= 1, got {n}")
        nu = spider_order(gamma, m)
        k_tilde = bessel_zero(nu, n) / scale

        def radial(r):
            return np.sqrt(r) * special.jv(nu, scale * k_tilde * r)

    angular_norm = 2.0 * np.pi if m == 0 else np.pi
    norm = _radial_norm(radial, angular_norm)
    trig = np.cos if parity == "cos" else np.sin

    def f(points):
        r = np.hypot(points[:, 0], points[:, 1])
        theta = np.arctan2(points[:, 1], points[:, 0])
        return radial(r) * trig(m * theta) / norm

    return AnalyticMode("spider", (m, n), float(k_tilde), f,
                        params={"gamma": gamma, "nu": nu, "parity": parity,
                                "radial": lambda r: radial(np.asarray(r, dtype=float)) / norm})


# ----------------------------------------------------------------------------
# sphere
# ----------------------------------------------------------------------------
@lru_cache(maxsize=256)
def _solid_harmonic_terms(l: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficients and (x, y, z) exponents of the real solid harmonic S_lm."""
    am = abs(m)
    vm = 0.5 if m < 0 else 0.0
    coefs, powers = [], []
    for t in range((l - am) // 2 + 1):
        for u in range(t + 1):
            v = vm
            while v <= np.floor(am / 2.0 - vm) + vm:
                c = ((-1) ** int(round(t + v - vm)) * 0.25 ** t * special.binom(l, t)
                     * special.binom(l - t, am + t) * special.binom(t, u) * special.binom(am, 2 * v))
                coefs.append(c)
                powers.append((int(round(2 * t + am - 2 * (u + v))), int(round(2 * (u + v))), l - 2 * t - am))
                v += 1.0
    norm = np.sqrt(2.0 * special.factorial(l + am) * special.factorial(l - am) / (2.0 if m == 0 else 1.0))
    norm /= 2.0 ** am * special.factorial(l)
    return np.array(coefs) * norm, np.array(powers, dtype=np.int64)


def real_solid_harmonic(l: int, m: int, xyz: np.ndarray) -> np.ndarray:
    coefs, powers = _solid_harmonic_terms(l, m)
    xyz = np.atleast_2d(xyz)
    mono = np.prod(xyz[:, None, :] ** powers[None, :, :], axis=2)
    return mono @ coefs


def _solid_harmonic_gradient(l: int, m: int, xyz: np.ndarray) -> np.ndarray:
    coefs, powers = _solid_harmonic_terms(l, m)
    xyz = np.atleast_2d(xyz)
    grad = np.zeros_like(xyz, dtype=float)
    for axis in range(3):
        lowered = powers.copy()
        lowered[:, axis] = np.maximum(lowered[:, axis] - 1, 0)
        mono = np.prod(xyz[:, None, :] ** lowered[None, :, :], axis=2)
        grad[:, axis] = mono @ (coefs * powers[:, axis])
    return grad


def real_spherical_harmonic(l: int, m: int, points: np.ndarray) -> np.ndarray:
    """Orthonormal real Y_lm at the directions of ``points``."""
    if l < 0 or abs(m) > l:
        raise InvalidSpec(f"need l >= 0 and |m| <= l, got ({l}, {m})")
    u = np.atleast_2d(points)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return np.sqrt((2 * l + 1) / (4.0 * np.pi)) * real_solid_harmonic(l, m, u)


def spherical_harmonic_gradient(l: int, m: int, points: np.ndarray) -> np.ndarray:
    """Tangent surface gradient of Y_lm on the unit sphere as an ambient 3-vector.

    S_lm is homogeneous of degree l, so x·∇S = l S and the tangent part of
    ∇S at a unit vector x is ∇S - l S x.
    """
    u = np.atleast_2d(points)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    grad = _solid_harmonic_gradient(l, m, u) - l * real_solid_harmonic(l, m, u)[:, None] * u
    return np.sqrt((2 * l + 1) / (4.0 * np.pi)) * grad


def sphere_mode(j: int, m: int) -> AnalyticMode:
    """Y_jm with k̃_j = sqrt(j(j+1)/2)."""
    if j < 0 or abs(m) > j:
        raise InvalidSpec(f"need j >= 0 and |m| <= j, got ({j}, {m})")
    return AnalyticMode(
        "sphere", (j, m), float(np.sqrt(j * (j + 1) / 2.0)),
        lambda points: real_spherical_harmonic(j, m, points),
        gradient=lambda points: spherical_harmonic_gradient(j, m, points),
        params={"d": 2},
    )


def sphere_level(j: int) -> List[AnalyticMode]:
    return [sphere_mode(j, m) for m in range(-j, j + 1)]


# ----------------------------------------------------------------------------
# default mode sets and PDE residuals
# ----------------------------------------------------------------------------
def default_modes(family: str, **params) -> List[AnalyticMode]:
    """Mode grids compared against computed spectra, per family."""
    if family == "square":
        return [square_mode(m, n) for m in (1, 2, 3) for n in (1, 2, 3)]
    if family == "rect":
        r = tuple(params.get("r", (1.0 / 3.0, 2.0 / 3.0)))
        return [rect_mode(m, n, r) for m in (1, 2, 3) for n in (1, 2, 3)]
    if family == "spider":
        gamma = float(params.get("gamma", 1.0))
        modes = [spider_mode(gamma, 0, n) for n in (0, 1, 2)]
        for m in (1, 2):
            for n in (1, 2, 3):
                modes += [spider_mode(gamma, m, n, "cos"), spider_mode(gamma, m, n, "sin")]
        return modes
    if family in ("sphere", "goldberg"):
        jmax = int(params.get("jmax", 4))
        return [mode for j in range(1, jmax + 1) for mode in sphere_level(j)]
    if family == "interval":
        return [interval_mode(n) for n in range(1, int(params.get("nmax", 5)) + 1)]
    raise InvalidSpec(f"no analytic modes for family {family!r}")


def _continuum_operator(mode: AnalyticMode, points: np.ndarray, h: float) -> np.ndarray:
    f = mode.evaluator
    if mode.family == "sphere":
        lap = -6.0 * f(points)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            lap = lap + f(points + e) + f(points - e)
        return 0.5 * lap / (h * h)

    if mode.family == "spider":
        gamma = mode.params["gamma"]
        r = np.hypot(points[:, 0], points[:, 1])
        theta = np.arctan2(points[:, 1], points[:, 0])

        def polar(rr, tt):
            return f(np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=1))

        f0 = polar(r, theta)
        f_rr = (polar(r + h, theta) - 2.0 * f0 + polar(r - h, theta)) / (h * h)
        f_tt = (polar(r, theta + h) - 2.0 * f0 + polar(r, theta - h)) / (h * h)
        rho = r / gamma
        return (rho * f_rr + f_tt / r) / (rho + r)

    if mode.family == "interval":
        x = points[:, :1]
        return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)

    weights = mode.params.get("r", (0.5, 0.5))
    out = np.zeros(len(points))
    f0 = f(points)
    for axis, w in enumerate(weights):
        e = np.zeros(points.shape[1])
        e[axis] = h
        out += w * (f(points + e) - 2.0 * f0 + f(points - e)) / (h * h)
    return out


def pde_residual(mode: AnalyticMode, points: np.ndarray, h: float = FD_STEP) -> float:
    """max |𝓛f + k̃²f| / (k̃² max|f|) at the given points, by central differences."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k2 = mode.k_tilde ** 2
    values = mode.evaluator(points)
    residual = _continuum_operator(mode, points, h) + k2 * values
    scale = k2 * max(float(np.max(np.abs(values))), np.finfo(float).tiny)
    return float(np.max(np.abs(residual)) / scale)


def random_interior_points(family: str, count: int, rng_seed: int = 0) -> np.ndarray:
    """Sample points strictly inside the family's domain (unit vectors on spheres)."""
    rng = np.random.default_rng(rng_seed)
    if family in ("square", "rect"):
        return rng.uniform(0.05, 0.95, size=(count, 2))
    if family == "interval":
        return rng.uniform(0.05, 0.95, size=(count, 1))
    if family == "spider":
        r = rng.uniform(0.1, 0.9, count)
        theta = rng.uniform(0.0, 2.0 * np.pi, count)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    if family == "sphere":
        v = rng.standard_normal((count, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    raise InvalidSpec(f"unknown family {family!r}")


def group_levels(modes: Sequence[AnalyticMode], rtol: float = 1e-9) -> List[List[AnalyticMode]]:
    """Analytic modes grouped into eigenspaces of equal k̃, ascending."""
    levels: List[List[AnalyticMode]] = []
    for mode in sorted(modes, key=lambda a: a.k_tilde):
        if levels and abs(mode.k_tilde - levels[-1][0].k_tilde) <= rtol * max(1.0, mode.k_tilde):
            levels[-1].append(mode)
        else:
            levels.append([mode])
    return levels


def level_label(modes: Sequence[AnalyticMode]) -> str:
    return "|".join(",".join(str(i) for i in mode.indices) + _parity_suffix(mode) for mode in modes)


def _parity_suffix(mode: AnalyticMode) -> str:
    parity: Optional[str] = mode.params.get("parity")
    return "s" if parity == "sin" else ""
