"""Fit configuration and the report record shared by all fitters."""

import json
from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class FitConfig:
    """Stopping rules and pruning knobs common to the iterative fitters.

    ``tol`` is a relative change threshold on the objective and ``delta``
    the pruning threshold; ``floor`` is the eigenvalue floor used by the
    penalty pseudo-determinants.  A ``delta`` of ``None`` asks each fitter
    for its family default.
    """

    tol: float = 1e-5
    max_iter: int = 10_000
    delta: float | None = None
    floor: float = 1e-6
    seed: int = 0


@dataclass
class PruneEvent:
    """One model-shrink step inside a fit."""

    iteration: int
    k_before: int
    k_after: int
    dropped_eigenvalues: list
    objective_before: float
    objective_after: float


@dataclass
class FitReport:
    """Outcome of one fit: selected size, trajectory, prune log, timings."""

    selected_k: int
    trajectory: list
    prune_events: list
    iterations: int
    wall_ms: float
    seed: int

    def to_json(self, indent=2):
        return json.dumps(asdict(self), indent=indent)

    @property
    def objective(self):
        """Final objective value (last trajectory entry)."""
        return self.trajectory[-1]
