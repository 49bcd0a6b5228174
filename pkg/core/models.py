from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from core.errors import ConfigError, InvalidSpec

# f_V: real vector indexed by vertex id
VertexFunction = np.ndarray

BOUNDARY_KINDS = ("clamped", "free")
LATTICE_BOUNDARIES = ("clamped", "free", "periodic")
CONNECTIVITIES = ("cardinal", "ordinal", "both")
TRACE_MODES = ("exact", "stochastic", "auto")
CONWAY_OPS = {"t": "truncate", "truncate": "truncate", "d": "dual", "dual": "dual"}


@dataclass(slots=True)
class Vertex:
    id: int
    position: np.ndarray
    boundary: bool = False


@dataclass(slots=True)
class Edge:
    tail: int  # local coordinate 0
    head: int  # local coordinate length
    length: float


# ---------------------------------------------------------------------------
# builder specs
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class LatticeSpec:
    nx: int
    ny: int
    spacing: Optional[Tuple[float, float]] = None  # default: fill the unit square
    boundary: str = "clamped"  # clamped | free | periodic
    connectivity: str = "cardinal"  # cardinal | ordinal | both

    def validate(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise InvalidSpec(f"lattice needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if self.boundary not in LATTICE_BOUNDARIES:
            raise InvalidSpec(f"unknown lattice boundary {self.boundary!r}")
        if self.connectivity not in CONNECTIVITIES:
            raise InvalidSpec(f"unknown connectivity {self.connectivity!r}")
        if self.spacing is not None and min(self.spacing) <= 0:
            raise InvalidSpec(f"lattice spacing must be positive, got {self.spacing}")
        if self.boundary == "periodic" and (self.nx < 3 or self.ny < 3):
            # wrap-around on two columns would double every edge
            raise InvalidSpec("periodic lattices need nx, ny >= 3")

    def resolved_spacing(self) -> Tuple[float, float]:
        if self.spacing is not None:
            return float(self.spacing[0]), float(self.spacing[1])
        if self.boundary == "periodic":
            return 1.0 / self.nx, 1.0 / self.ny
        return 1.0 / (self.nx - 1), 1.0 / (self.ny - 1)


@dataclass(slots=True)
class SpiderSpec:
    M: int
    gamma: float = 1.0  # rho(r) = r / gamma unless profile is given
    profile: Optional[Callable[[float], float]] = None
    clamped: bool = True
    inner_radius: Optional[float] = None
    radii: Optional[Tuple[float, ...]] = None  # explicit rings, overrides integration

    def validate(self) -> None:
        if self.M < 3:
            raise InvalidSpec(f"spider web needs M >= 3, got {self.M}")
        if self.profile is None and self.gamma <= 0:
            raise InvalidSpec(f"gamma must be positive, got {self.gamma}")
        if self.inner_radius is not None and not 0 < self.inner_radius < 1:
            raise InvalidSpec(f"inner_radius must lie in (0, 1), got {self.inner_radius}")
        if self.radii is not None:
            r = np.asarray(self.radii, dtype=float)
            if r.size < 1 or r[0] <= 0 or np.any(np.diff(r) <= 0):
                raise InvalidSpec("spider radii must be positive and strictly increasing")

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.M

    def rho(self, r: float) -> float:
        if self.profile is not None:
            return float(self.profile(r))
        return r / self.gamma


@dataclass(slots=True)
class PolyhedronSpec:
    seed: str = "icosahedron"
    ops: Tuple[str, ...] = ()
    project_each_step: bool = True

    def validate(self) -> None:
        if self.seed != "icosahedron":
            raise InvalidSpec(f"only the icosahedron seed is supported, got {self.seed!r}")
        for op in self.ops:
            if op not in CONWAY_OPS:
                raise InvalidSpec(f"unknown Conway operation {op!r}")

    def normalized_ops(self) -> Tuple[str, ...]:
        return tuple(CONWAY_OPS[op] for op in self.ops)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class SolverConfig:
    k_min: float = 0.1
    k_max: float = 10.0
    seed_density: float = 40.0
    newton_tol: float = 1e-12
    max_iter: int = 100
    dedup_tol: float = 1e-7
    nullspace_tol: float = 1e-8
    trace_mode: str = "auto"
    probe_count: int = 30
    rng_seed: int = 0
    stochastic_threshold: int = 2000
    pole_exclusion: float = 1e-6
    pole_tol: float = 1e-10
    certificate_tol: float = 1e-8
    quad_order: int = 16
    threads: int = 1
    count_check: bool = True  # fill roots the seeds miss, checked by inertia per pole interval

    def validate(self) -> None:
        if not 0 < self.k_min < self.k_max:
            raise ConfigError(f"need 0 < k_min < k_max, got [{self.k_min}, {self.k_max}]")
        for name in ("seed_density", "newton_tol", "dedup_tol", "nullspace_tol",
                     "pole_exclusion", "pole_tol", "certificate_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.probe_count < 1:
            raise ConfigError("probe_count must be >= 1")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.trace_mode not in TRACE_MODES:
            raise ConfigError(f"unknown trace mode {self.trace_mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def resolve_trace_mode(self, n: int) -> str:
        if self.trace_mode != "auto":
            return self.trace_mode
        return "stochastic" if n > self.stochastic_threshold else "exact"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(slots=True)
class EigenMode:
    k: float
    f_V: VertexFunction
    multiplicity: int
    basis: List[VertexFunction] = field(default_factory=list)
    residual: float = 0.0  # ||L f||_inf / ||f||_inf
    kirchhoff: float = 0.0


@dataclass(slots=True)
class SeedRecord:
    seed: float
    k: float
    iterations: int
    status: str  # converged | escaped | max_iter | pole | singular | rejected
    last_step: float = float("nan")


@dataclass(slots=True)
class Spectrum:
    modes: List[EigenMode] = field(default_factory=list)
    pole_candidates: List[float] = field(default_factory=list)
    diagnostics: List[SeedRecord] = field(default_factory=list)
    boundary: str = "clamped"
    trace_mode: str = "exact"
    rng_seed: int = 0

    @property
    def ks(self) -> np.ndarray:
        return np.array([m.k for m in self.modes], dtype=float)

    def expanded_ks(self) -> np.ndarray:
        """k values repeated by multiplicity."""
        return np.repeat(self.ks, [m.multiplicity for m in self.modes])

    @property
    def total_multiplicity(self) -> int:
        return int(sum(m.multiplicity for m in self.modes))

    def status_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for rec in self.diagnostics:
            counts[rec.status] = counts.get(rec.status, 0) + 1
        return counts


# ---------------------------------------------------------------------------
# continuum, analytic, comparison
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class ContinuumField:
    R: np.ndarray  # (|V|, d, d) ambient tensors
    trR: np.ndarray
    mu: np.ndarray
    r0: float
    mu0: float
    omega_volume: float
    interior: np.ndarray  # bool mask
    manifold_dim: int
    density_mode: str = "dual_cell"
    normals: Optional[np.ndarray] = None  # unit normals for sphere graphs


@dataclass(slots=True)
class HomogeneityReport:
    homogeneity_defect: float
    isotropy_defect: float
    relative_homogeneity: float
    relative_isotropy: float
    n_interior: int


@dataclass(slots=True)
class AnalyticMode:
    family: str  # square | rect | spider | sphere | interval
    indices: Tuple[int, ...]
    k_tilde: float
    evaluator: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluator(np.atleast_2d(points))


@dataclass(slots=True)
class ModeMatch:
    computed: EigenMode
    analytic: List[AnalyticMode]  # the whole analytic eigenspace
    analytic_index: int  # which member of ``analytic`` this row reports
    eta: float
    chi: float
    alpha: np.ndarray

    @property
    def k(self) -> float:
        return self.computed.k

    @property
    def k_tilde(self) -> float:
        return self.analytic[self.analytic_index].k_tilde


@dataclass(slots=True)
class ConvergenceRow:
    family: str
    n_vertices: int
    alpha: str
    k: float
    k_tilde: float
    eta: float
    chi: float
    runtime: float
    eta_corrected: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(slots=True)
class PerturbationProblem:
    graph: Any  # MetricGraph on the unit sphere
    field: ContinuumField
    j: int
    lambda0: float  # -j(j+1)/d
    basis: List[AnalyticMode]
    weights: np.ndarray  # vertex-sum weights, 1/|V| for the empirical measure
    points: np.ndarray  # unit vectors where the sum is taken
    d: int = 2


@dataclass(slots=True)
class SplittingResult:
    j: int
    lambda0: float
    lambda1: np.ndarray  # ascending
    vectors: np.ndarray  # columns u_m
    k_pred: np.ndarray  # sqrt(-lambda0 - lambda1), descending
    reliable: bool = True


@dataclass(slots=True)
class DispersionQuery:
    connectivity: str
    ell: float
    kx: float
    ky: float

    def validate(self) -> None:
        if self.connectivity not in CONNECTIVITIES:
            raise InvalidSpec(f"unknown connectivity {self.connectivity!r}")
        if self.ell <= 0:
            raise InvalidSpec(f"lattice spacing must be positive, got {self.ell}")


# ---------------------------------------------------------------------------
# cli
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class RunConfig:
    command: str
    graph: Optional[str] = None
    output: Optional[str] = None
    family: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    boundary: str = "clamped"
    rng_seed: int = 0
    threads: int = 1
