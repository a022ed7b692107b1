"""Synthetic benchmark: data generation, method sweeps, and report files.

The study protocol fits every method to the same seeded low-rank-plus-noise
data.  Fixed-size methods (EM, BICEM, VB1, VB2) are swept over K = 2..k_max;
the self-pruning methods (GFAB, FABGMM) run once per seed starting from
k_max.  Each (method, K, seed) cell is independent, so a sweep can run cells
concurrently; records are sorted before writing so output never depends on
the execution schedule.
"""

import concurrent.futures
import csv
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import bpca, gmm, vb
from .errors import ContractViolation
from .numerics import Rng
from .report import FitConfig

SWEEP_METHODS = ("EM", "BICEM", "VB1", "VB2")
ONEPASS_METHODS = ("GFAB", "FABGMM")
ALL_METHODS = SWEEP_METHODS + ONEPASS_METHODS

SWEEP_CSV_HEADER = ["method", "K", "seed", "objective", "selected_k",
                    "iterations", "wall_ms", "status"]
SKEW_CSV_HEADER = ["n", "tau", "q_binomial", "penalty", "skewed"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Study protocol: data sizes, model grid, stopping rules, seeds."""

    n_list: tuple = (100, 500, 1000, 2000)
    d: int = 30
    k_true: int = 10
    k_max: int = 30
    sigma_noise: float = 1.0
    seeds: tuple = tuple(range(10))
    methods: tuple = ALL_METHODS
    tol: float = 1e-5
    max_iter: int = 10_000
    delta: float | None = None

    def __post_init__(self):
        if not (self.k_true <= self.k_max <= self.d):
            raise ContractViolation("need k_true <= k_max <= d")
        if self.tol <= 0:
            raise ContractViolation("tol must be > 0")


@dataclass(frozen=True)
class SweepRecord:
    """Outcome of one (method, K, seed) cell."""

    method: str
    k: int
    seed: int
    objective: float
    selected_k: int
    iterations: int
    wall_ms: float
    status: str = "ok"


def generate_synthetic(n, d, k_true, sigma_noise, seed):
    """Low-rank data ``X = Z W' + E`` from one seeded stream.

    ``W`` is d x k_true uniform on [0, 1], ``Z`` is n x k_true standard
    normal, ``E`` is n x d with standard deviation ``sigma_noise``; the
    stream is consumed in exactly that order, row-major, so equal seeds give
    bit-identical matrices.  Returned uncentered (fitters center).
    """
    rng = Rng(seed)
    w = rng.uniforms(d * k_true).reshape(d, k_true)
    z = rng.normals(n * k_true).reshape(n, k_true)
    if sigma_noise > 0:
        e = sigma_noise * rng.normals(n * d).reshape(n, d)
    else:
        e = np.zeros((n, d))
    return z @ w.T + e


def _data_seed(seed):
    # data and initialization share the run seed through fixed substreams
    return Rng(seed).spawn(1).state


def _run_cell(x, method, k, seed, config):
    fit_config = FitConfig(tol=config.tol, max_iter=config.max_iter,
                           delta=config.delta, seed=seed)
    if method == "EM":
        report = bpca.fit_em_bpca(x, k, fit_config, mode="em")
    elif method == "BICEM":
        report = bpca.fit_em_bpca(x, k, fit_config, mode="bicem")
    elif method == "VB1":
        report = vb.fit_vb(x, k, fit_config, mode="vb1")
    elif method == "VB2":
        report = vb.fit_vb(x, k, fit_config, mode="vb2")
    elif method == "GFAB":
        report = bpca.fit_gfab_bpca(x, k, fit_config)
    elif method == "FABGMM":
        report = gmm.fit_fab_gmm(x, k, fit_config, sigma2=1.0)
    else:
        raise ContractViolation(f"unknown method {method!r}")
    return SweepRecord(
        method=method, k=k, seed=seed,
        objective=float(report.trajectory[-1]),
        selected_k=report.selected_k,
        iterations=report.iterations,
        wall_ms=report.wall_ms,
        status="ok",
    )


def run_sweep(config, n, jobs=1):
    """All (method, K, seed) cells of the protocol at sample size ``n``.

    One-pass methods get a single cell per seed starting at ``k_max``;
    fixed-size methods sweep K = 2..k_max.  A failed cell becomes a
    ``status="failed"`` record instead of aborting the sweep.  Records come
    back sorted by (method, K, seed) regardless of ``jobs``.
    """
    cells = []
    for method in config.methods:
        if method in ONEPASS_METHODS:
            for seed in config.seeds:
                cells.append((method, config.k_max, seed))
        elif method in SWEEP_METHODS:
            for k in range(2, config.k_max + 1):
                for seed in config.seeds:
                    cells.append((method, k, seed))
        else:
            raise ContractViolation(f"unknown method {method!r}")

    data_cache = {}
    for seed in config.seeds:
        data_cache[seed] = generate_synthetic(
            n, config.d, config.k_true, config.sigma_noise, _data_seed(seed))

    def run_one(cell):
        method, k, seed = cell
        try:
            return _run_cell(data_cache[seed], method, k, seed, config)
        except Exception:
            return SweepRecord(method=method, k=k, seed=seed,
                               objective=math.nan, selected_k=0,
                               iterations=0, wall_ms=0.0, status="failed")

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run_one, cells))
    else:
        records = [run_one(cell) for cell in cells]
    records.sort(key=lambda r: (r.method, r.k, r.seed))
    return records


@dataclass(frozen=True)
class SkewTable:
    """Penalty-reweighted assignment-count posterior on the grid n = 0..N.

    ``q_binomial``, ``penalty`` and ``skewed`` are each normalized to sum
    to one.
    """

    counts: np.ndarray
    tau: np.ndarray
    q_binomial: np.ndarray
    penalty: np.ndarray
    skewed: np.ndarray


def _log_plus(x):
    """log(x) for x > 1, else 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    mask = x > 1.0
    out[mask] = np.log(x[mask])
    return out


def demo_skew_gmm(n, mu1, mu2, pi_star):
    """Exact one-dimensional two-component study of the pruning pressure.

    Data follow ``pi_star N(mu1, 1) + (1 - pi_star) N(mu2, 1)`` and the
    fitted component means sit at the truth.  The expected posterior of the
    assignment count ``N tau`` is Binomial(n, omega) with
    ``omega = pi G1 / (pi G1 + (1 - pi) G2)``,
    ``G_i = exp(-E[(x - mu_i)^2] / 2) / sqrt(2 pi)``.  The penalty column is
    ``exp(-(log+(N tau) + log+(N(1 - tau))) / 2)`` and the skewed posterior
    the normalized product of the two.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    if not 0 < pi_star < 1:
        raise ContractViolation("pi_star must lie in (0, 1)")
    # second moments of the data distribution around each fitted mean
    e1 = pi_star * (1.0 + (mu1 - mu1) ** 2) + (1.0 - pi_star) * (1.0 + (mu2 - mu1) ** 2)
    e2 = pi_star * (1.0 + (mu1 - mu2) ** 2) + (1.0 - pi_star) * (1.0 + (mu2 - mu2) ** 2)
    g1 = math.exp(-0.5 * e1) / math.sqrt(2.0 * math.pi)
    g2 = math.exp(-0.5 * e2) / math.sqrt(2.0 * math.pi)
    omega = pi_star * g1 / (pi_star * g1 + (1.0 - pi_star) * g2)

    counts = np.arange(n + 1)
    tau = counts / n
    log_binom = (
        gammaln(n + 1) - gammaln(counts + 1) - gammaln(n - counts + 1)
        + counts * math.log(omega) + (n - counts) * math.log1p(-omega)
    )
    q_binomial = np.exp(log_binom - log_binom.max())
    q_binomial /= q_binomial.sum()

    penalty = np.exp(-0.5 * (_log_plus(counts) + _log_plus(n - counts)))
    penalty = penalty / penalty.sum()

    skewed = q_binomial * penalty
    skewed /= skewed.sum()
    return SkewTable(counts=counts, tau=tau, q_binomial=q_binomial,
                     penalty=penalty, skewed=skewed)


def _atomic_write(path, write_fn):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as handle:
            write_fn(handle)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"failed writing {path}: {exc}") from exc


def write_reports(records, path):
    """Sweep records as CSV with shortest round-trip float formatting."""

    def write(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SWEEP_CSV_HEADER)
        for r in records:
            writer.writerow([r.method, r.k, r.seed, repr(float(r.objective)),
                             r.selected_k, r.iterations, repr(float(r.wall_ms)),
                             r.status])

    _atomic_write(path, write)


def read_report_csv(path):
    """Round-trip parse of a sweep CSV back into records."""
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            records.append(SweepRecord(
                method=row["method"], k=int(row["K"]), seed=int(row["seed"]),
                objective=float(row["objective"]), selected_k=int(row["selected_k"]),
                iterations=int(row["iterations"]), wall_ms=float(row["wall_ms"]),
                status=row["status"],
            ))
    return records


def write_data_csv(x, path):
    """Data matrix as CSV with columns x1..xD."""
    x = np.asarray(x, dtype=float)

    def write(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(x.shape[1])])
        for row in x:
            writer.writerow([repr(float(v)) for v in row])

    _atomic_write(path, write)


def read_data_csv(path):
    """Data matrix back from :func:`write_data_csv` output."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if rows and any(len(r) != len(header) for r in rows):
        raise ContractViolation(f"ragged rows in {path}")
    return np.asarray(rows, dtype=float).reshape(len(rows), len(header))


def write_skew_csv(table, path):
    """Skew demo table as CSV."""

    def write(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SKEW_CSV_HEADER)
        for i in range(table.counts.size):
            writer.writerow([int(table.counts[i]), repr(float(table.tau[i])),
                             repr(float(table.q_binomial[i])),
                             repr(float(table.penalty[i])),
                             repr(float(table.skewed[i]))])

    _atomic_write(path, write)
