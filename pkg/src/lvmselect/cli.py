"""Command-line front end: gen, fit, sweep, demo-skew, check.

Flags override config-file values; every config key has a flag twin with
dashes for underscores.  ``--seed`` falls back to the ``LVMSELECT_SEED``
environment variable.  Output files are written to a temp file and renamed,
so a failing run leaves no partial output.  Exit codes: 0 success, 1 usage
error, 2 runtime failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import bpca, gmm, harness, vb
from .criteria import (
    ScalarModel,
    hessian_fd,
    laplace_log_marginal,
    quadrature_log_marginal,
)
from .errors import LvmSelectError
from .numerics import Rng
from .report import FitConfig

USAGE_EXIT = 1
RUNTIME_EXIT = 2

_CONFIG_KEYS = ("n", "d", "k_true", "k_max", "sigma", "seed", "method", "model",
                "k", "data", "out", "tol", "max_iter", "delta", "jobs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _build_parser():
    parser = _Parser(prog="lvmselect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="run seed (env LVMSELECT_SEED fallback)")
        p.add_argument("--out", help="output file path")
        p.add_argument("--tol", type=float, help="relative convergence tolerance")
        p.add_argument("--max-iter", type=int, help="iteration cap")
        p.add_argument("--delta", type=float, help="pruning threshold")

    p_gen = sub.add_parser("gen", help="generate synthetic data CSV")
    add_common(p_gen)
    p_gen.add_argument("--n", type=int, help="number of rows")
    p_gen.add_argument("--d", type=int, help="data dimensionality")
    p_gen.add_argument("--k-true", type=int, help="generator rank")
    p_gen.add_argument("--sigma", type=float, help="noise standard deviation")

    p_fit = sub.add_parser("fit", help="fit one model to a data CSV")
    add_common(p_fit)
    p_fit.add_argument("--method", help="gfab | em | bicem | vb1 | vb2 | fabgmm")
    p_fit.add_argument("--model", help="bpca | gmm")
    p_fit.add_argument("--k", type=int, help="model size (start size for pruning methods)")
    p_fit.add_argument("--data", help="input data CSV")

    p_sweep = sub.add_parser("sweep", help="run the study protocol, write sweep CSV")
    add_common(p_sweep)
    p_sweep.add_argument("--n", type=int, help="restrict the sweep to one sample size")
    p_sweep.add_argument("--d", type=int)
    p_sweep.add_argument("--k-true", type=int)
    p_sweep.add_argument("--k-max", type=int)
    p_sweep.add_argument("--sigma", type=float)
    p_sweep.add_argument("--jobs", type=int, help="concurrent cells (default 1)")

    p_skew = sub.add_parser("demo-skew", help="write the penalty-skew table CSV")
    add_common(p_skew)
    p_skew.add_argument("--n", type=int, help="sample count of the toy posterior")

    p_check = sub.add_parser("check", help="run the built-in numeric self-checks")
    add_common(p_check)
    return parser


def _load_config(path):
    with open(path, encoding="utf-8") as handle:
        raw = json.load(handle)
    unknown = set(raw) - set(_CONFIG_KEYS) - {"n_list", "seeds", "methods"}
    if unknown:
        raise LvmSelectError(f"unknown config keys: {sorted(unknown)}")
    return raw


def _merged(args, key, default=None):
    val = getattr(args, key, None)
    if val is not None:
        return val
    if getattr(args, "_config", None) and key in args._config:
        return args._config[key]
    return default


def _seed_of(args):
    seed = _merged(args, "seed")
    if seed is None:
        env = os.environ.get("LVMSELECT_SEED")
        seed = int(env) if env else 0
    return int(seed)


def _usage_error(message):
    print(f"lvmselect: error: {message}", file=sys.stderr)
    return SystemExit(USAGE_EXIT)


def _require(args, key):
    val = _merged(args, key)
    if val is None:
        raise _usage_error(f"missing required option --{key.replace('_', '-')}")
    return val


def _fit_config(args):
    return FitConfig(
        tol=float(_merged(args, "tol", 1e-5)),
        max_iter=int(_merged(args, "max_iter", 10_000)),
        delta=_merged(args, "delta"),
        seed=_seed_of(args),
    )


def _cmd_gen(args):
    n = int(_require(args, "n"))
    d = int(_merged(args, "d", 30))
    k_true = int(_merged(args, "k_true", 10))
    sigma = float(_merged(args, "sigma", 1.0))
    out = _require(args, "out")
    x = harness.generate_synthetic(n, d, k_true, sigma, _seed_of(args))
    harness.write_data_csv(x, out)
    print(f"wrote {x.shape[0]}x{x.shape[1]} data to {out}")
    return 0


def _cmd_fit(args):
    method = str(_require(args, "method")).lower()
    model = str(_merged(args, "model", "bpca")).lower()
    k = int(_require(args, "k"))
    data_path = _require(args, "data")
    out = _require(args, "out")
    x = harness.read_data_csv(data_path)
    config = _fit_config(args)
    if model == "bpca":
        if method == "gfab":
            report = bpca.fit_gfab_bpca(x, k, config)
        elif method in ("em", "bicem"):
            report = bpca.fit_em_bpca(x, k, config, mode=method)
        elif method in ("vb1", "vb2"):
            report = vb.fit_vb(x, k, config, mode=method)
        else:
            raise _usage_error(f"method {method!r} is not valid for model bpca")
    elif model == "gmm":
        if method != "fabgmm":
            raise _usage_error(f"method {method!r} is not valid for model gmm")
        report = gmm.fit_fab_gmm(x, k, config)
    else:
        raise _usage_error(f"unknown model {model!r}")
    harness._atomic_write(out, lambda handle: handle.write(report.to_json() + "\n"))
    print(f"selected_k={report.selected_k} objective={report.trajectory[-1]:.6f} "
          f"iterations={report.iterations}")
    return 0


def _cmd_sweep(args):
    cfg_file = getattr(args, "_config", None) or {}
    n_flag = _merged(args, "n")
    n_list = [int(n_flag)] if n_flag is not None else [int(v) for v in cfg_file.get("n_list", (100, 500, 1000, 2000))]
    config = harness.ExperimentConfig(
        n_list=tuple(n_list),
        d=int(_merged(args, "d", 30)),
        k_true=int(_merged(args, "k_true", 10)),
        k_max=int(_merged(args, "k_max", 30)),
        sigma_noise=float(_merged(args, "sigma", 1.0)),
        seeds=tuple(cfg_file.get("seeds", tuple(range(10)))),
        methods=tuple(cfg_file.get("methods", harness.ALL_METHODS)),
        tol=float(_merged(args, "tol", 1e-5)),
        max_iter=int(_merged(args, "max_iter", 10_000)),
        delta=_merged(args, "delta"),
    )
    jobs = int(_merged(args, "jobs", 1))
    out = _require(args, "out")
    if len(config.n_list) == 1:
        records = harness.run_sweep(config, config.n_list[0], jobs=jobs)
        harness.write_reports(records, out)
        print(f"wrote {len(records)} records to {out}")
    else:
        stem, ext = os.path.splitext(out)
        for n in config.n_list:
            records = harness.run_sweep(config, n, jobs=jobs)
            path = f"{stem}_n{n}{ext or '.csv'}"
            harness.write_reports(records, path)
            print(f"wrote {len(records)} records to {path}")
    return 0


def _cmd_demo_skew(args):
    n = int(_merged(args, "n", 15))
    out = _require(args, "out")
    table = harness.demo_skew_gmm(n, mu1=0.0, mu2=1.0, pi_star=0.5)
    harness.write_skew_csv(table, out)
    print(f"wrote skew table with {table.counts.size} rows to {out}")
    return 0


def _check_hessian_blocks(seed):
    rng = Rng(seed)
    worst = 0.0
    for _ in range(5):
        n, d, k = 40, 3, 2
        z = rng.normals(n * k).reshape(n, k)
        w0 = rng.normals(d * k).reshape(d, k)
        x = z @ w0.T + 0.1 * rng.normals(n * d).reshape(n, d)
        lam = 2.0

        def loglik(wvec):
            w = wvec.reshape(d, k)
            resid = x - z @ w.T
            return -0.5 * lam * float(np.sum(resid * resid))

        fisher = hessian_fd(loglik, w0.ravel(), n)
        expected_block = lam * (z.T @ z) / n
        expected = np.kron(np.eye(d), expected_block)
        err = np.max(np.abs(fisher - expected)) / np.max(np.abs(expected))
        worst = max(worst, err)
    return worst < 1e-5, f"max relative error {worst:.3e}"


def _check_laplace_quadrature():
    worst = 0.0
    for n in (2, 10, 100):
        xbar = 0.3
        model = ScalarModel(
            loglik=lambda t, n=n: -0.5 * n * (t - xbar) ** 2,
            lo=xbar - 12.0 / math.sqrt(n), hi=xbar + 12.0 / math.sqrt(n), n=n)
        lap = laplace_log_marginal(model).total
        quad = quadrature_log_marginal(model)
        worst = max(worst, abs(lap - quad))
    return worst < 1e-6, f"max |laplace - quadrature| {worst:.3e}"


def _cmd_check(args):
    checks = [
        ("hessian-vs-finite-difference", lambda: _check_hessian_blocks(_seed_of(args))),
        ("laplace-vs-quadrature", _check_laplace_quadrature),
    ]
    failures = 0
    for name, fn in checks:
        try:
            ok, msg = fn()
        except Exception as exc:  # a failing check must not hide its peers
            ok, msg = False, f"error: {exc}"
        print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else RUNTIME_EXIT


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    try:
        args._config = _load_config(config_path) if config_path else None
    except (OSError, json.JSONDecodeError, LvmSelectError) as exc:
        print(f"lvmselect: error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    commands = {
        "gen": _cmd_gen,
        "fit": _cmd_fit,
        "sweep": _cmd_sweep,
        "demo-skew": _cmd_demo_skew,
        "check": _cmd_check,
    }
    try:
        return commands[args.command](args)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_EXIT
    except (LvmSelectError, OSError, ValueError) as exc:
        print(f"lvmselect: error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
