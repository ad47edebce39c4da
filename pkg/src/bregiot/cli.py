"""Command-line entry point (``bregiot``)."""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bcd import BcdConfig, solve_iot
from .closed_form import closed_form_inverse
from .errors import BregIOTError
from .experiments import (
    LAMBDA_GRID,
    STABILITY_GAMMAS,
    ExperimentConfig,
    exp_lambda_sweep,
    exp_random_marginals,
    exp_stability,
)
from .forward import SolverConfig, TransportProblem, solve_forward
from .generators import get_generator
from .io import read_matrix, write_matrix, write_report

C_MODES = {"newton": "newton", "pg": "projected_gradient", "projected_gradient": "projected_gradient"}


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _vector(arg, n):
    if arg is None:
        return np.full(n, 1.0 / n)
    if Path(arg).suffix.lower() in (".csv", ".txt") or Path(arg).exists():
        return read_matrix(arg).ravel()
    return np.array(_floats(arg))


def _limit_threads(threads):
    if not threads:
        return None
    try:
        import numba

        with warnings.catch_warnings():
            # probing threading layers warns about an old TBB; irrelevant here
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=threads)


def _emit(report, out):
    if out:
        write_report(out, report)
    else:
        import json

        from .io import to_jsonable

        json.dump(to_jsonable(report), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in row])


# -- subcommands -------------------------------------------------------------

def cmd_forward(a):
    C = read_matrix(a.cost)
    n, m = C.shape
    prob = TransportProblem(C, _vector(a.mu, n), _vector(a.nu, m), a.gamma, get_generator(a.gen))
    sol = solve_forward(prob, SolverConfig(tol=a.tol, max_iter=a.max_iter))
    if a.plan:
        write_matrix(a.plan, sol.plan)
    report = {"command": "forward", "generator": prob.gen.id, "gamma": a.gamma,
              "report": sol.report.to_dict(), "seed": a.seed}
    if a.plan is None and not a.out:
        report["plan"] = sol.plan
    _emit(report, a.out)


def cmd_invert_closed_form(a):
    X = read_matrix(a.xhat)
    set_id, _, w = a.set.partition(":")
    w = np.array(_floats(w)) if w else None
    cert = closed_form_inverse(a.gen, X, a.gamma, set_id, w=w, tol=a.tol)
    if a.cost_out:
        write_matrix(a.cost_out, cert.cost)
    _emit({"command": "invert-closed-form", "generator": get_generator(a.gen).id,
           "gamma": a.gamma, "certificate": cert.to_dict(), "seed": a.seed}, a.out)


def cmd_invert_bcd(a):
    X = read_matrix(a.xhat)
    cfg = BcdConfig(max_iters=a.max_iter, kkt_tol=a.tol, c_block_mode=C_MODES[a.c_mode])
    C, u, v, rep = solve_iot(
        X, X.sum(axis=1), X.sum(axis=0), a.gamma, a.lam, a.set, a.gen, cfg,
        zero_entries=a.zero_entries,
    )
    if a.cost_out:
        write_matrix(a.cost_out, C)
    _emit({"command": "invert-bcd", "config": vars_clean(a), "report": rep.to_dict(),
           "cost": C, "u": u, "v": v, "seed": a.seed}, a.out)


def vars_clean(a):
    return {k: v for k, v in vars(a).items() if k != "func"}


def cmd_exp_random(a):
    cfg = ExperimentConfig("random_marginals", n=a.n, trials=a.trials, gamma=a.gamma,
                           lam=a.lam, gen=a.gen, cset=a.set, seed=a.seed,
                           max_iters=a.max_iter, kkt_tol=a.tol)
    _emit(exp_random_marginals(cfg), a.out)


def cmd_exp_stability(a):
    gammas = _floats(a.gammas) if a.gammas else STABILITY_GAMMAS.tolist()
    cfg = ExperimentConfig("stability", n=a.n, trials=a.trials, gamma=gammas, gen=a.gen,
                           seed=a.seed)
    rep = exp_stability(cfg)
    if a.table:
        _write_table(a.table, ["gamma", "pass_rate", "ratio_mean", "ratio_min", "ratio_max"],
                     [[b["gamma"], b["pass_rate"], b["ratio"]["mean"], b["ratio"]["min"],
                       b["ratio"]["max"]] for b in rep["aggregates"]["buckets"]])
    _emit(rep, a.out)


def cmd_exp_lambda(a):
    lams = _floats(a.lambdas) if a.lambdas else LAMBDA_GRID.tolist()
    cfg = ExperimentConfig("lambda_sweep", n=a.n, trials=1, gamma=a.gamma, lam=lams,
                           gen=a.gen, cset=a.set, seed=a.seed, max_iters=a.max_iter,
                           kkt_tol=a.tol)
    rep = exp_lambda_sweep(cfg)
    if a.table:
        agg = rep["aggregates"]
        _write_table(a.table, ["lambda", "c_err", "x_err"],
                     list(zip(agg["lambda"], agg["c_err"], agg["x_err"])))
    _emit(rep, a.out)


def cmd_exp_matching(a):
    from .matching import exp_matching, load_matching_dataset

    ds = load_matching_dataset(a.data, k_cluster=a.k_cluster, seed=a.seed)
    cfg = ExperimentConfig("matching", n=ds.n_types, trials=a.folds, gamma=a.gamma,
                           lam=a.lam, gen="entropy", cset="affine", seed=a.seed,
                           max_iters=a.max_iter, kkt_tol=a.tol,
                           options={"noiseless": a.noiseless, "data": str(a.data),
                                    "k_cluster": a.k_cluster})
    _emit(exp_matching(ds, cfg, folds=a.folds), a.out)


def cmd_gen_synthetic_matching(a):
    from .matching import generate_synthetic_matching, save_matching_dataset

    if not a.out:
        raise SystemExit("gen-synthetic-matching needs --out DIR")
    ds = generate_synthetic_matching(
        seed=a.seed, d=a.d, n_types=a.types, n_pairs=a.pairs, gamma=a.gamma,
        noiseless=a.noiseless, individuals_noise=a.individuals_noise,
    )
    save_matching_dataset(ds, a.out)
    print(f"wrote synthetic matching dataset to {a.out}")


# -- parser ------------------------------------------------------------------

def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--out", default=argparse.SUPPRESS,
                   help="output path (report .json, or directory for gen-synthetic-matching)")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="cap on BLAS and numba threads")
    return p


def build_parser():
    common = _common()
    p = argparse.ArgumentParser(prog="bregiot", parents=[common],
                                description="Bregman-regularized (inverse) optimal transport")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(func=func)
        return s

    s = add("forward", cmd_forward, "solve the forward regularized OT problem")
    s.add_argument("--cost", required=True, help="cost matrix CSV")
    s.add_argument("--mu", help="row marginal: CSV file or comma list (default uniform)")
    s.add_argument("--nu", help="column marginal: CSV file or comma list (default uniform)")
    s.add_argument("--gen", default="entropy")
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=10_000)
    s.add_argument("--plan", help="write the plan to this CSV")

    s = add("invert-closed-form", cmd_invert_closed_form, "closed-form inverse with certificate")
    s.add_argument("--xhat", required=True)
    s.add_argument("--gen", default="entropy")
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--set", default="sh", help="sh | shw:<w1,...> | mc | ed | whole_space")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--cost-out")

    s = add("invert-bcd", cmd_invert_bcd, "recover a cost by block coordinate descent")
    s.add_argument("--xhat", required=True)
    s.add_argument("--gen", default="entropy")
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-8)
    s.add_argument("--set", default="sh")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--c-mode", choices=sorted(C_MODES), default="newton")
    s.add_argument("--zero-entries", choices=["raise", "allow"], default="raise")
    s.add_argument("--cost-out")

    s = add("exp-random", cmd_exp_random, "recovery from random marginals")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--gen", default="entropy")
    s.add_argument("--set", default="sh", choices=["sh", "ed"])
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-8)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=100)

    s = add("exp-stability", cmd_exp_stability, "stability-bound sweep over gamma")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--gen", default="entropy")
    s.add_argument("--gammas", help="comma list (default: 20 log-spaced in [0.01, 10])")
    s.add_argument("--table", help="plot-ready CSV of per-gamma results")

    s = add("exp-lambda", cmd_exp_lambda, "penalty-weight sweep on one instance")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--gen", default="entropy")
    s.add_argument("--set", default="sh", choices=["sh", "ed"])
    s.add_argument("--gamma", type=float, default=0.1)
    s.add_argument("--lambdas", help="comma list (default: 25 log-spaced in [1e-12, 1e-2])")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--table", help="plot-ready CSV of the sweep")

    s = add("exp-matching", cmd_exp_matching, "cross-validated matching experiment")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--k-cluster", type=int, help="rebuild types by k-means from individuals")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--noiseless", action="store_true",
                   help="invert the whole matching once and report the plan RMSE")

    s = add("gen-synthetic-matching", cmd_gen_synthetic_matching,
            "write a synthetic dataset with a planted affinity matrix")
    s.add_argument("--d", type=int, default=11)
    s.add_argument("--types", type=int, default=50)
    s.add_argument("--pairs", type=int, default=50_000)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--individuals-noise", type=float, default=0.0,
                   help="also write individuals.csv/pairs.csv with this feature noise")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", 0), ("out", None), ("threads", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    limiter = _limit_threads(args.threads)
    try:
        args.func(args)
    except BregIOTError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.unregister()
    return 0


if __name__ == "__main__":
    sys.exit(main())
