"""Bayesian PCA with an information-penalized variational fit and EM baseline.

Model: ``x_n = W z_n + noise``, ``z_n ~ N(0, I_K)``, isotropic noise with
precision ``lam``.  The latent posterior is a mean-field Gaussian with
per-row means ``mu_n`` and one shared covariance ``sigma``.

The penalized objective charges each latent coordinate for the volume of
its information block, ``(D/2) log(N lam g_k)``, where ``g_k`` is an
eigenvalue of the mean Gram matrix ``G = mu'mu / N`` (the posterior-mean
plug-in for ``Z'Z/N``; for one-hot latents this reduces to the classical
expected-count statistic).  A coordinate is *active* while
``N lam g_k > 1``; inactive coordinates are charged nothing, making the
objective continuous when a coordinate degenerates and leaving model
removal neutral-or-better.  Equivalently the dimension term counts only the
effective (non-degenerate) rank of the model.

The penalty gradient enters the mean update as an extra precision
``(D/N) G^+`` restricted to active coordinates.  For a coordinate whose
data support is too thin, the shrink is self-reinforcing: its mean energy
collapses below the activity boundary within a few iterations and the
coordinate is then pruned.  The posterior covariance is penalty-free in
closed form because the penalty statistic depends on means only.
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, DegenerateMatrix, ModelCollapsed, NumericalFailure
from .numerics import Rng, solve_spd, sym_eig
from .report import FitConfig, FitReport, PruneEvent

LAMBDA_MIN = 1e-8
LAMBDA_MAX = 1e8

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BpcaParams:
    """Linear basis ``w`` (D x K) and noise precision ``lam``."""

    w: np.ndarray
    lam: float

    def __post_init__(self):
        if self.lam <= 0 or not np.isfinite(self.lam):
            raise ContractViolation("lam must be positive and finite")
        if not np.all(np.isfinite(self.w)):
            raise ContractViolation("w must be finite")

    @property
    def k(self):
        return self.w.shape[1]

    @property
    def d(self):
        return self.w.shape[0]


@dataclass(frozen=True)
class GaussianLatentPosterior:
    """Mean-field Gaussian over latents: means ``mu`` (N x K), shared ``sigma``."""

    mu: np.ndarray
    sigma: np.ndarray

    @property
    def n(self):
        return self.mu.shape[0]

    @property
    def k(self):
        return self.mu.shape[1]

    @property
    def second_moment(self):
        """``S = mu'mu + N sigma`` (K x K)."""
        return self.mu.T @ self.mu + self.n * self.sigma

    @property
    def mean_gram(self):
        """``G = mu'mu / N`` (K x K), the penalty and pruning statistic."""
        return (self.mu.T @ self.mu) / self.n


def activity_floor(n, lam):
    """Mean-energy level below which a coordinate stops being charged."""
    return 1.0 / (n * lam)


def penalty_bpca(q, lam, d, floor):
    """Size penalty ``-(d/2) (kappa log lam + logdet_floored(G))``.

    Eigenvalues of the mean Gram matrix below ``floor`` are excluded from
    the determinant and from the ``log lam`` count; their positions (in
    descending eigenvalue order) are reported as degenerate.
    """
    if floor <= 0:
        raise ContractViolation("floor must be > 0")
    eig = sym_eig(q.mean_gram)
    kept = eig.eigenvalues >= floor
    logdet = float(np.sum(np.log(eig.eigenvalues[kept])))
    n_active = int(np.sum(kept))
    degenerate = [int(i) for i in np.nonzero(~kept)[0]]
    return -0.5 * d * (n_active * math.log(lam) + logdet), degenerate


def _entropy(q):
    n, k = q.mu.shape
    sign, logdet = np.linalg.slogdet(q.sigma)
    if sign <= 0:
        return -np.inf
    return 0.5 * n * k * (1.0 + _LOG_2PI) + 0.5 * n * logdet


def expected_loglik_bpca(x, params, q):
    """``E_q[log p(X, Z | params)]`` in closed form."""
    n, d = x.shape
    s = q.second_moment
    w, lam = params.w, params.lam
    cross = x.T @ q.mu
    resid = (
        float(np.sum(x * x))
        - 2.0 * float(np.sum(w * cross))
        + float(np.sum((w.T @ w) * s))
    )
    like = 0.5 * n * d * (math.log(lam) - _LOG_2PI) - 0.5 * lam * resid
    prior = -0.5 * n * q.k * _LOG_2PI - 0.5 * float(np.trace(s))
    return like + prior


def objective_bpca(x, params, q, n, floor=None):
    """Penalized lower bound with effective-rank dimension counting.

    ``E_q[log p] + penalty + H(q) - ((D kappa + 1)/2) log N`` where
    ``kappa`` is the number of active coordinates and ``floor`` defaults to
    the activity boundary ``1/(N lam)``.  Charged and uncharged coordinates
    meet continuously at the boundary.
    """
    d = x.shape[1]
    if floor is None:
        floor = activity_floor(n, params.lam)
    pen, degenerate = penalty_bpca(q, params.lam, d, floor)
    kappa = q.k - len(degenerate)
    d_theta = d * kappa + 1
    return (
        expected_loglik_bpca(x, params, q)
        + pen
        + _entropy(q)
        - 0.5 * d_theta * math.log(n)
    )


def em_objective_bpca(x, params, q):
    """Plain free energy ``E_q[log p] + H(q)`` used by the EM baseline."""
    return expected_loglik_bpca(x, params, q) + _entropy(q)


def _active_gram_pull(gram, floor):
    """``G^+`` restricted to eigenvalues at or above ``floor``."""
    eig = sym_eig(gram)
    inv = np.where(eig.eigenvalues >= floor, 1.0 / np.maximum(eig.eigenvalues, floor), 0.0)
    return (eig.eigenvectors * inv) @ eig.eigenvectors.T


def update_q_bpca(x, params, q_prev, penalty_enabled=True, floor=None,
                  max_inner=20, inner_tol=1e-8, damping=0.5):
    """Mean-field update of the latent posterior.

    The covariance is the standard posterior ``(I + lam W'W)^{-1}`` (the
    penalty statistic is mean-only).  With the penalty enabled the means
    solve a fixed point: the precision gains ``(D/N) G^+`` built from the
    previous iterate's mean Gram matrix, restricted to active coordinates,
    and the iteration stops when ``G`` stabilizes or after ``max_inner``
    rounds; a step that lowers the penalized objective is damped.  The
    returned posterior is never worse than ``q_prev`` under that objective.
    """
    n, d = x.shape
    w, lam = params.w, params.lam
    k = params.k
    wtw = w.T @ w
    xw = x @ w

    sigma = solve_spd(np.eye(k) + lam * wtw, np.eye(k))
    sigma = 0.5 * (sigma + sigma.T)
    if not penalty_enabled:
        mu = lam * xw @ sigma
        return GaussianLatentPosterior(mu=mu, sigma=sigma)

    if floor is None:
        floor = activity_floor(n, lam)

    def score(q):
        return objective_bpca(x, params, q, n, floor=floor)

    gram = q_prev.mean_gram
    best = None
    obj_prev = -np.inf
    for _ in range(max_inner):
        a_mu = np.eye(k) + lam * wtw + (d / n) * _active_gram_pull(gram, floor)
        mu = np.linalg.solve(a_mu.T, (lam * xw).T).T
        if not np.all(np.isfinite(mu)):
            raise NumericalFailure("q-update produced non-finite means")
        q_new = GaussianLatentPosterior(mu=mu, sigma=sigma)
        gram_new = q_new.mean_gram
        obj = score(q_new)
        if best is None or obj >= best[0]:
            best = (obj, q_new)
        if obj < obj_prev:
            gram_next = damping * gram + (1.0 - damping) * gram_new
        else:
            gram_next = gram_new
        rel = np.max(np.abs(gram_next - gram)) / max(1.0, float(np.max(np.abs(gram))))
        gram = gram_next
        obj_prev = obj
        if rel < inner_tol:
            break
    if score(q_prev) > best[0]:
        return q_prev
    return best[1]


def update_theta_bpca(x, q, floor=1e-6):
    """Expected joint-likelihood maximizer of ``(W, lam)`` given ``q``."""
    n, d = x.shape
    s = q.second_moment
    smallest = float(np.linalg.eigvalsh(s / n)[0])
    if smallest < floor:
        raise DegenerateMatrix(
            f"latent second moment is degenerate (eigenvalue {smallest:.3e}); prune first",
            smallest_eigenvalue=smallest,
        )
    cross = x.T @ q.mu
    w = solve_spd(s, cross.T).T
    resid = (
        float(np.sum(x * x))
        - 2.0 * float(np.sum(w * cross))
        + float(np.sum((w.T @ w) * s))
    )
    inv_lam = max(resid, 0.0) / (n * d)
    lam = 1.0 / max(inv_lam, 1.0 / LAMBDA_MAX)
    lam = min(max(lam, LAMBDA_MIN), LAMBDA_MAX)
    return BpcaParams(w=w, lam=lam)


def prune_bpca(params, q, delta):
    """Rotate into the mean-Gram eigenbasis and drop dead coordinates.

    Coordinates whose mean-Gram eigenvalue falls below ``delta`` carry no
    posterior mean energy; removing them (after rotating ``mu``, ``sigma``
    and ``w`` by the eigenvectors) shrinks K without losing fit.  Returns
    the possibly reduced ``(params, q, dropped)`` where ``dropped`` is None
    when nothing was removed.
    """
    if delta <= 0:
        raise ContractViolation("delta must be > 0")
    eig = sym_eig(q.mean_gram)
    keep = eig.eigenvalues >= delta
    if not np.any(keep):
        raise ModelCollapsed("all latent coordinates fell below the pruning threshold")
    if np.all(keep):
        return params, q, None
    v = eig.eigenvectors
    mu = q.mu @ v
    sigma = v.T @ q.sigma @ v
    w = params.w @ v
    idx = np.nonzero(keep)[0]
    q_new = GaussianLatentPosterior(mu=mu[:, idx], sigma=sigma[np.ix_(idx, idx)])
    params_new = BpcaParams(w=w[:, idx], lam=params.lam)
    dropped = [float(ev) for ev in eig.eigenvalues[~keep]]
    return params_new, q_new, dropped


def _init_state(x, k, seed):
    n, d = x.shape
    rng = Rng(seed)
    w = rng.normals(d * k).reshape(d, k) / math.sqrt(k)
    total = float(np.sum(x * x))
    lam = n * d / max(total, 1e-300)
    lam = min(max(lam, LAMBDA_MIN), LAMBDA_MAX)
    params = BpcaParams(w=w, lam=lam)
    q = update_q_bpca(x, params, q_prev=None, penalty_enabled=False)
    return params, q


def center_columns(x):
    """Column-centered copy of a data matrix."""
    x = np.asarray(x, dtype=float)
    return x - x.mean(axis=0, keepdims=True)


def _lam_ascent_step(x, params, q, n):
    """Noise-precision step that never decreases the penalized objective.

    The exact expected-likelihood maximizer of ``lam`` overshoots the
    penalized objective's own optimum (the penalty carries
    ``-(D kappa / 2) log lam``), which near convergence can turn the
    parameter step into a small descent.  Trying {current, expected-MJLE,
    penalty-corrected} and keeping the best under the objective restores
    monotone ascent without moving the stationary point.
    """
    d = x.shape[1]
    s = q.second_moment
    cross = x.T @ q.mu
    w = params.w
    resid = (
        float(np.sum(x * x))
        - 2.0 * float(np.sum(w * cross))
        + float(np.sum((w.T @ w) * s))
    )
    resid = max(resid, 1e-300)
    candidates = {params.lam, n * d / resid}
    if n > q.k:
        candidates.add((n * d - d * q.k) / resid)
    best_lam, best_obj = None, -np.inf
    for lam in candidates:
        lam = min(max(lam, LAMBDA_MIN), LAMBDA_MAX)
        obj = objective_bpca(x, replace(params, lam=lam), q, n)
        if obj > best_obj:
            best_lam, best_obj = lam, obj
    return replace(params, lam=best_lam)


def fit_gfab_bpca(x, k_init, config=None):
    """One-pass penalized fit with in-loop model pruning.

    Cycles q-update, prune, parameter update until the relative objective
    change falls below ``config.tol`` or ``config.max_iter`` is hit.  The
    data is column-centered internally.
    """
    config = config or FitConfig()
    delta = 1e-4 if config.delta is None else config.delta
    x = center_columns(x)
    n, d = x.shape
    if k_init > min(n, d):
        raise ContractViolation("k_init must be <= min(N, D)")
    t0 = time.perf_counter()
    params, q = _init_state(x, k_init, config.seed)
    trajectory = []
    prune_events = []
    prev = None
    iterations = 0
    for it in range(1, config.max_iter + 1):
        iterations = it
        q = update_q_bpca(x, params, q, penalty_enabled=True)
        pruned = prune_bpca(params, q, delta)
        if pruned[2] is not None:
            obj_before = objective_bpca(x, params, q, n)
            params, q, dropped = pruned
            obj_after = objective_bpca(x, params, q, n)
            prune_events.append(PruneEvent(
                iteration=it,
                k_before=params.k + len(dropped),
                k_after=params.k,
                dropped_eigenvalues=dropped,
                objective_before=obj_before,
                objective_after=obj_after,
            ))
        else:
            params, q, _ = pruned
        w_new = update_theta_bpca(x, q, floor=config.floor).w
        params = replace(params, w=w_new)
        params = _lam_ascent_step(x, params, q, n)
        obj = objective_bpca(x, params, q, n)
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


def fit_em_bpca(x, k, config=None, mode="em"):
    """EM baseline at fixed K (no penalty, no pruning).

    ``mode="bicem"`` reports the same trajectory shifted down by the
    dimension penalty ``((D K + 1)/2) log N``.
    """
    if mode not in ("em", "bicem"):
        raise ContractViolation(f"unknown mode {mode!r}")
    config = config or FitConfig()
    x = center_columns(x)
    n, d = x.shape
    if k > min(n, d):
        raise ContractViolation("k must be <= min(N, D)")
    t0 = time.perf_counter()
    params, q = _init_state(x, k, config.seed)
    trajectory = []
    prev = None
    iterations = 0
    for it in range(1, config.max_iter + 1):
        iterations = it
        q = update_q_bpca(x, params, q, penalty_enabled=False)
        params = update_theta_bpca(x, q, floor=config.floor)
        obj = em_objective_bpca(x, params, q)
        if not np.isfinite(obj):
            raise NumericalFailure(f"objective became non-finite at iteration {it}")
        trajectory.append(obj)
        if prev is not None and abs(obj - prev) < config.tol * abs(prev):
            break
        prev = obj
    wall_ms = (time.perf_counter() - t0) * 1e3
    if mode == "bicem":
        shift = 0.5 * (d * k + 1) * math.log(n)
        trajectory = [v - shift for v in trajectory]
    return FitReport(
        selected_k=k,
        trajectory=trajectory,
        prune_events=[],
        iterations=iterations,
        wall_ms=wall_ms,
        seed=config.seed,
    )
