"""Model-selection mathematics shared by the model families.

Holds the floored log-determinant and rank used by the pruning machinery,
the BIC-style dimension penalty, and two independent oracles: a scalar
Laplace approximation of the log marginal likelihood with a matching
adaptive-Simpson quadrature, and a central-difference Hessian used to check
analytic information-matrix formulas.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    BoundaryMode,
    ContractViolation,
    DegenerateMatrix,
    NumericalFailure,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def pseudo_logdet(a, floor):
    """Sum of log eigenvalues at or above ``floor``.

    Returns ``(value, excluded_count)`` where the count is the number of
    eigenvalues that fell below the floor and were left out of the sum.
    """
    if floor <= 0:
        raise ContractViolation("floor must be > 0")
    a = np.asarray(a, dtype=float)
    vals = np.linalg.eigvalsh(0.5 * (a + a.T))
    kept = vals[vals >= floor]
    return float(np.sum(np.log(kept))), int(vals.size - kept.size)


def kappa(f, floor):
    """Number of eigenvalues of ``f`` at or above ``floor`` (effective rank)."""
    if floor <= 0:
        raise ContractViolation("floor must be > 0")
    f = np.asarray(f, dtype=float)
    vals = np.linalg.eigvalsh(0.5 * (f + f.T))
    return int(np.sum(vals >= floor))


def bicem_penalty(d_theta, n):
    """Dimension penalty ``(d_theta / 2) * log(n)``."""
    if n < 2:
        raise ContractViolation("n must be >= 2")
    if d_theta < 0:
        raise ContractViolation("d_theta must be >= 0")
    return 0.5 * d_theta * math.log(n)


@dataclass(frozen=True)
class ScalarModel:
    """One-dimensional log-joint ``loglik(theta)`` on [lo, hi] for n samples.

    ``loglik`` must accept numpy arrays (it is evaluated on grids) and may
    return ``-inf`` at the interval endpoints.
    """

    loglik: Callable[[np.ndarray], np.ndarray]
    lo: float
    hi: float
    n: int


@dataclass(frozen=True)
class PenaltyBreakdown:
    """Laplace log-marginal split into its three terms.

    ``total = loglik_at_mode - half_logdet_term - dim_term``.
    """

    loglik_at_mode: float
    half_logdet_term: float
    dim_term: float
    total: float


def _golden_section_max(f, lo, hi, tol=1e-10):
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
    return 0.5 * (a + b)


def laplace_log_marginal(model, grid_points=513):
    """Laplace approximation of ``log \\int exp(loglik) dtheta``.

    The mode is located by a grid scan refined with golden-section search;
    the curvature comes from a second central difference.  A mode on the
    interval boundary raises :class:`BoundaryMode`, non-positive curvature
    raises :class:`DegenerateMatrix`.
    """
    lo, hi = float(model.lo), float(model.hi)
    if not lo < hi:
        raise ContractViolation("requires lo < hi")
    grid = np.linspace(lo, hi, grid_points)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(model.loglik(grid), dtype=float)
    interior = vals[1:-1]
    if not np.all(np.isfinite(interior)):
        raise ContractViolation("log-joint must be finite on the open interval")
    i = 1 + int(np.argmax(interior))
    if i <= 1 or i >= grid_points - 2:
        edge = vals[0] if i <= 1 else vals[-1]
        if not np.isfinite(edge) or edge >= interior.max():
            raise BoundaryMode("log-joint mode lies on the interval boundary")
    # one-maximum sanity scan: the grid profile must rise then fall
    diffs = np.diff(interior)
    sign_changes = int(np.sum(np.abs(np.diff(np.sign(diffs[np.abs(diffs) > 0]))) > 0))
    if sign_changes > 1:
        raise ContractViolation("log-joint is not unimodal on the interval")

    def f(theta):
        return float(model.loglik(np.asarray([theta]))[0])

    theta_hat = _golden_section_max(f, grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)])
    h = 1e-4 * (1.0 + abs(theta_hat))
    second = (f(theta_hat + h) - 2.0 * f(theta_hat) + f(theta_hat - h)) / (h * h)
    fisher = -second / model.n
    if not np.isfinite(fisher) or fisher <= 0:
        raise DegenerateMatrix(
            "second derivative at the mode is not negative",
            smallest_eigenvalue=fisher if np.isfinite(fisher) else None,
        )
    loglik_at_mode = f(theta_hat)
    half_logdet = 0.5 * math.log(fisher)
    dim_term = -0.5 * math.log(2.0 * math.pi / model.n)
    return PenaltyBreakdown(
        loglik_at_mode=loglik_at_mode,
        half_logdet_term=half_logdet,
        dim_term=dim_term,
        total=loglik_at_mode - half_logdet - dim_term,
    )


def _simpson_log_integral(model, panels):
    theta = np.linspace(model.lo, model.hi, panels + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(model.loglik(theta), dtype=float)
    vmax = float(np.max(vals[np.isfinite(vals)]))
    g = np.exp(vals - vmax)
    g[~np.isfinite(vals)] = 0.0
    h = (model.hi - model.lo) / panels
    integral = (h / 3.0) * (g[0] + g[-1] + 4.0 * np.sum(g[1:-1:2]) + 2.0 * np.sum(g[2:-1:2]))
    if integral <= 0 or not np.isfinite(integral):
        raise NumericalFailure("quadrature integral underflowed to zero")
    return math.log(integral) + vmax


def quadrature_log_marginal(model, panels=256):
    """Composite-Simpson ``log \\int exp(loglik)`` with panel doubling.

    Doubles the panel count until two successive refinements agree within
    1e-8; gives up past 2**20 panels.
    """
    if panels < 100:
        raise ContractViolation("panels must be >= 100")
    panels = int(panels)
    if panels % 2:
        panels += 1
    prev = _simpson_log_integral(model, panels)
    while panels <= (1 << 20):
        panels *= 2
        cur = _simpson_log_integral(model, panels)
        if abs(cur - prev) < 1e-8:
            return cur
        prev = cur
    raise NumericalFailure("quadrature did not converge within 2**20 panels")


def hessian_fd(loglik, theta, n):
    """Central-difference estimate of ``-(1/n) * grad^2 loglik`` at ``theta``.

    This is the empirical-information convention: for a log-joint the result
    converges to the information matrix the penalties are built from.
    Steps are ``1e-4 * (1 + |theta_i|)`` per coordinate.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    p = theta.size
    steps = 1e-4 * (1.0 + np.abs(theta))
    hess = np.zeros((p, p))

    def f(t):
        v = float(loglik(t))
        if not np.isfinite(v):
            raise NumericalFailure("log-joint evaluated non-finite during differencing")
        return v

    f0 = f(theta)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = steps[i]
        hess[i, i] = (f(theta + ei) - 2.0 * f0 + f(theta - ei)) / (steps[i] ** 2)
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = steps[j]
            hess[i, j] = (
                f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hess[j, i] = hess[i, j]
    out = -hess / float(n)
    return 0.5 * (out + out.T)
