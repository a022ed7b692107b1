"""Gaussian mixture with a sample-count penalty, component pruning, and EM.

Components are isotropic Gaussians with a fixed, known variance ``sigma2``;
only the mixing weights and means are estimated.  The penalized E-step
down-weights components in proportion to ``exp(-D / (2 N tau_k))`` where
``tau_k`` is the previous share of expected assignments, the linearization
of the ``-(D/2) log tau_k`` complexity penalty.  Components whose share
drops below a threshold are deleted during the fit.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ModelCollapsed, NumericalFailure
from .numerics import Rng
from .report import FitConfig, FitReport, PruneEvent

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmParams:
    """Mixing weights ``beta`` (K,), means (K x D), fixed variance ``sigma2``."""

    beta: np.ndarray
    means: np.ndarray
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ContractViolation("sigma2 must be > 0")
        if np.any(self.beta < 0) or abs(float(np.sum(self.beta)) - 1.0) > 1e-12:
            raise ContractViolation("beta must be a probability vector")

    @property
    def k(self):
        return self.beta.size


@dataclass(frozen=True)
class Responsibilities:
    """Row-stochastic soft assignments (N x K)."""

    r: np.ndarray

    @property
    def tau(self):
        """Per-component share of expected assignments, ``sum_n r_nk / N``."""
        return self.r.mean(axis=0)

    @property
    def n(self):
        return self.r.shape[0]

    @property
    def k(self):
        return self.r.shape[1]


def _log_density(x, params):
    """Log of ``beta_k N(x_n | m_k, sigma2 I)`` for all (n, k), in log space."""
    d = x.shape[1]
    sq = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ params.means.T
        + np.sum(params.means * params.means, axis=1)[None, :]
    )
    with np.errstate(divide="ignore"):
        log_beta = np.log(params.beta)[None, :]
    return log_beta - 0.5 * sq / params.sigma2 - 0.5 * d * math.log(2.0 * math.pi * params.sigma2)


def _normalize_rows(log_r):
    log_r = log_r - log_r.max(axis=1, keepdims=True)
    r = np.exp(log_r)
    r /= r.sum(axis=1, keepdims=True)
    return Responsibilities(r=r)


def fab_e_step(x, params, tau_prev, delta):
    """Penalized posterior responsibilities.

    Each component's likelihood is multiplied by
    ``exp(-D / (2 N max(tau_prev_k, delta)))`` before row normalization, so
    components with few expected samples shrink further.  Computed in log
    space; never raises on underflow.
    """
    tau_prev = np.asarray(tau_prev, dtype=float)
    if np.any(tau_prev < 0):
        raise ContractViolation("tau_prev entries must be >= 0")
    n, d = x.shape
    shrink = -0.5 * d / (n * np.maximum(tau_prev, delta))
    return _normalize_rows(_log_density(x, params) + shrink[None, :])


def em_e_step_gmm(x, params):
    """Plain posterior responsibilities (no shrink factor)."""
    return _normalize_rows(_log_density(x, params))


def m_step_gmm(x, resp, sigma2):
    """Expected joint-likelihood maximizer: ``beta = tau``, weighted means."""
    tau = resp.tau
    if np.any(tau <= 0):
        raise ContractViolation("every retained component needs tau > 0; prune first")
    counts = tau * resp.n
    means = (resp.r.T @ x) / counts[:, None]
    beta = tau / float(np.sum(tau))
    return GmmParams(beta=beta, means=means, sigma2=sigma2)


def expected_loglik_gmm(x, params, resp):
    """``E_q[log p(X, Z | params)]`` under the responsibilities."""
    return float(np.sum(resp.r * _log_density(x, params)))


def _entropy(resp):
    r = resp.r
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -r * np.log(r)
    return float(np.sum(h[r > 0]))


def objective_fic_mm(x, params, resp, n, delta=1e-6):
    """Penalized mixture objective.

    ``E_q[log p] - sum_k (D/2) log(max(tau_k, delta)) + H(q)
    - (D_theta / 2) log N`` with ``D_theta = K D + K - 1``.
    """
    d = x.shape[1]
    k = params.k
    tau = np.maximum(resp.tau, delta)
    penalty = -0.5 * d * float(np.sum(np.log(tau)))
    d_theta = k * d + k - 1
    return (
        expected_loglik_gmm(x, params, resp)
        + penalty
        + _entropy(resp)
        - 0.5 * d_theta * math.log(n)
    )


def prune_gmm(params, resp, delta):
    """Delete components whose assignment share ``tau_k`` is below ``delta``.

    Rows of the remaining responsibilities and the mixing weights are
    renormalized.  Returns ``(params, resp, dropped_taus)`` with
    ``dropped_taus`` None when nothing was deleted.
    """
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    tau = resp.tau
    keep = tau >= delta
    if not np.any(keep):
        raise ModelCollapsed("all mixture components fell below the pruning threshold")
    if np.all(keep):
        return params, resp, None
    r = resp.r[:, keep]
    rowsum = r.sum(axis=1, keepdims=True)
    if np.any(rowsum <= 0):
        raise NumericalFailure("responsibility rows lost all mass during pruning")
    r = r / rowsum
    beta = params.beta[keep]
    beta = beta / float(np.sum(beta))
    params_new = GmmParams(beta=beta, means=params.means[keep, :], sigma2=params.sigma2)
    dropped = [float(t) for t in tau[~keep]]
    return params_new, Responsibilities(r=r), dropped


def _init_params(x, k, seed, sigma2):
    rng = Rng(seed)
    idx = rng.choice_without_replacement(x.shape[0], k)
    means = x[idx, :].copy()
    beta = np.full(k, 1.0 / k)
    return GmmParams(beta=beta, means=means, sigma2=sigma2)


def fit_fab_gmm(x, k_init, config=None, sigma2=1.0,
                enable_shrink=True, enable_prune=True):
    """Penalized mixture fit with in-loop component deletion.

    With ``enable_shrink`` and ``enable_prune`` both off this is plain EM
    (the trajectory still reports the penalized objective).  Means are
    initialized from ``k_init`` distinct data rows drawn with the run seed.
    """
    if k_init < 1:
        raise ContractViolation("k_init must be >= 1")
    config = config or FitConfig()
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    delta = (1e-2 / k_init) if config.delta is None else config.delta
    t0 = time.perf_counter()
    params = _init_params(x, k_init, config.seed, sigma2)
    tau_prev = np.full(k_init, 1.0 / k_init)
    trajectory = []
    prune_events = []
    prev = None
    iterations = 0
    for it in range(1, config.max_iter + 1):
        iterations = it
        if enable_shrink:
            resp = fab_e_step(x, params, tau_prev, delta)
        else:
            resp = em_e_step_gmm(x, params)
        if enable_prune:
            pruned = prune_gmm(params, resp, delta)
            if pruned[2] is not None:
                obj_before = objective_fic_mm(x, params, resp, n, delta)
                params, resp, dropped = pruned
                obj_after = objective_fic_mm(x, params, resp, n, delta)
                prune_events.append(PruneEvent(
                    iteration=it,
                    k_before=params.k + len(dropped),
                    k_after=params.k,
                    dropped_eigenvalues=dropped,
                    objective_before=obj_before,
                    objective_after=obj_after,
                ))
        params = m_step_gmm(x, resp, sigma2)
        tau_prev = resp.tau
        obj = objective_fic_mm(x, params, resp, n, delta)
        if not np.isfinite(obj):
            raise NumericalFailure(f"objective became non-finite at iteration {it}")
        trajectory.append(obj)
        if prev is not None and abs(obj - prev) < config.tol * abs(prev):
            break
        prev = obj
    wall_ms = (time.perf_counter() - t0) * 1e3
    return FitReport(
        selected_k=params.k,
        trajectory=trajectory,
        prune_events=prune_events,
        iterations=iterations,
        wall_ms=wall_ms,
        seed=config.seed,
    )
