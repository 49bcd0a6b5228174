"""Exception hierarchy for metriq.

Every error carries a stable ``category`` string (printed by the CLI as the
machine-readable error category) and the process exit code it maps to.
Library code only raises; ``metriq.py`` is the single place that turns an
exception into an exit status.
"""
from __future__ import annotations

from typing import Any, Iterable, Optional


class MetriqError(Exception):
    category = "domain"
    exit_code = 4

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def as_dict(self) -> dict[str, Any]:
        return {"category": self.category, "message": self.message, **self.context}


# ---------------------------------------------------------------------------
# configuration / io
# ---------------------------------------------------------------------------
class ConfigError(MetriqError):
    category = "config"
    exit_code = 2


class IoError(MetriqError):
    category = "io"
    exit_code = 3


# ---------------------------------------------------------------------------
# graph & secular system
# ---------------------------------------------------------------------------
class InvalidSpec(MetriqError):
    category = "invalid_spec"


class DegenerateRings(InvalidSpec):
    category = "degenerate_rings"


class PoleOnEdge(MetriqError):
    category = "pole_on_edge"

    def __init__(self, k: float, edge: int):
        super().__init__(f"k={k!r} is a pole of edge {edge}", k=k, edge=edge)
        self.k = k
        self.edge = edge


class OutOfRange(MetriqError):
    category = "out_of_range"


class PoleAt(MetriqError):
    category = "pole"

    def __init__(self, k: float, edges: Iterable[int]):
        edges = [int(e) for e in edges]
        shown = edges[:10]
        more = "" if len(edges) <= 10 else f" (+{len(edges) - 10} more)"
        super().__init__(f"k={k!r} is a pole of edges {shown}{more}", k=k, edges=edges)
        self.k = k
        self.edges = edges


class SingularAt(MetriqError):
    category = "singular"

    def __init__(self, k: float):
        super().__init__(f"secular matrix is exactly singular at k={k!r}", k=k)
        self.k = k


class NotEquilateral(MetriqError):
    category = "not_equilateral"


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------
class NoRootsFound(MetriqError):
    category = "no_roots"


class ConvergenceFailure(MetriqError):
    category = "convergence"


class BesselZeroNotFound(ConvergenceFailure):
    category = "bessel_zero"


class NoSolutionInBranch(MetriqError):
    category = "no_solution_in_branch"


class UnboundedCell(MetriqError):
    category = "unbounded_cell"

    def __init__(self, message: str, vertex: Optional[int] = None):
        super().__init__(message, vertex=vertex)
        self.vertex = vertex


class TilingGap(UnboundedCell):
    """Dual cells do not add up to |Ω|."""
    category = "tiling_gap"

    def __init__(self, total: float, volume: float):
        super().__init__(f"dual cells cover {total:.12g}, domain has {volume:.12g}")
        self.context.update(total=total, volume=volume)
        self.total = total
        self.volume = volume


class AmbiguousMatch(MetriqError):
    category = "ambiguous_match"


class SingularB(MetriqError):
    category = "singular_b"
