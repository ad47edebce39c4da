"""Numerical experiments: recovery from random marginals, the stability
bound, and the penalty-weight sweep.

Every experiment returns a plain ``dict`` report with the keys ``experiment``,
``config``, ``trials`` (per-trial records), ``aggregates``, ``sampling``,
``versions`` and ``seed``.  Trial ``k`` draws all of its randomness from
``SeedSequence(seed, spawn_key=(k,))``, so :func:`trial_rng` rebuilds it.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from .bcd import BcdConfig, solve_iot
from .closed_form import stability_rhs
from .errors import BregIOTError
from .forward import DualPotentials, SolverConfig, TransportProblem, solve_forward
from .generators import get_generator
from .sets import Sh, get_set

__all__ = [
    "ExperimentConfig",
    "trial_rng",
    "sample_marginals",
    "sample_cost",
    "rel_err",
    "exp_random_marginals",
    "random_marginals_trial",
    "exp_stability",
    "exp_lambda_sweep",
    "STABILITY_GAMMAS",
    "LAMBDA_GRID",
]

STABILITY_GAMMAS = np.logspace(-2, 1, 20)
LAMBDA_GRID = np.logspace(-12, -2, 25)
STABILITY_EPS = 1e-20
STABILITY_TOL = 1e-9

SAMPLING = {
    "marginals": "iid uniform(0.1, 1), normalized",
    "cost_sh": "upper triangle iid uniform(0, 1), symmetrized, zero diagonal",
    "cost_ed": "n points iid uniform in [0, 1]^3, squared pairwise distances",
}


@dataclass
class ExperimentConfig:
    experiment: str
    n: int = 10
    trials: int = 10
    gamma: float | list = 1.0
    lam: float | list = 1e-8
    gen: str = "entropy"
    cset: str = "sh"
    seed: int = 0
    max_iters: int = 100
    kkt_tol: float = 1e-6
    c_block_mode: str = "newton"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        grid = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if grid.size == 0 or np.any(grid <= 0):
            raise ValueError("gamma grid must be nonempty and positive")
        if np.atleast_1d(np.asarray(self.lam, dtype=float)).size == 0:
            raise ValueError("lambda grid must be nonempty")

    def to_dict(self):
        d = asdict(self)
        for k in ("gamma", "lam"):
            if isinstance(d[k], np.ndarray):
                d[k] = d[k].tolist()
        return d

    def bcd(self):
        return BcdConfig(
            max_iters=self.max_iters, kkt_tol=self.kkt_tol, c_block_mode=self.c_block_mode
        )


def versions():
    from . import __version__

    return {"bregiot": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def trial_rng(seed, trial):
    """Generator for trial ``trial`` of an experiment seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def sample_marginals(rng, n):
    mu = rng.uniform(0.1, 1.0, n)
    nu = rng.uniform(0.1, 1.0, n)
    return mu / mu.sum(), nu / nu.sum()


def sample_cost(rng, n, cset="sh"):
    kind = get_set(cset).kind
    if kind == "ed":
        pts = rng.uniform(size=(n, 3))
        return ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    if kind == "sh":
        A = np.triu(rng.uniform(size=(n, n)), 1)
        return A + A.T
    raise ValueError(f"no ground-truth sampler for set {cset!r}")


def rel_err(ref, est, guard=1e-300):
    """``(||ref - est||_F / ||ref||_F, 'relative')``, falling back to the
    absolute error when ``ref`` vanishes."""
    num = float(np.linalg.norm(np.asarray(ref) - np.asarray(est)))
    den = float(np.linalg.norm(ref))
    if den <= guard:
        return num, "absolute"
    return num / den, "relative"


def _forward(gen, C, mu, nu, gamma, warm=None):
    cfg = SolverConfig(warm_start=warm)
    return solve_forward(TransportProblem(C, mu, nu, gamma, gen), cfg)


def _summary(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"mean": math.nan, "min": math.nan, "max": math.nan, "count": 0}
    return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max()), "count": int(v.size)}


def _report(cfg, trials, aggregates):
    return {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "trials": trials,
        "aggregates": aggregates,
        "sampling": dict(SAMPLING),
        "versions": versions(),
        "seed": cfg.seed,
    }


# -- recovery from random marginals -------------------------------------------

def random_marginals_trial(cfg: ExperimentConfig, trial: int) -> dict:
    """One recovery trial; reproducible from ``(cfg.seed, trial)`` alone."""
    rng = trial_rng(cfg.seed, trial)
    gen = get_generator(cfg.gen)
    gamma = float(np.atleast_1d(cfg.gamma)[0])
    lam = float(np.atleast_1d(cfg.lam)[0])
    rec = {"trial": trial, "sub_seed": [cfg.seed, trial], "ok": False}
    mu, nu = sample_marginals(rng, cfg.n)
    if cfg.options.get("zero_cost"):
        C = np.zeros((cfg.n, cfg.n))
    else:
        C = sample_cost(rng, cfg.n, cfg.cset)
    try:
        X = _forward(gen, C, mu, nu, gamma).plan
        t0 = time.perf_counter()
        C_rec, _, _, rep = solve_iot(X, mu, nu, gamma, lam, cfg.cset, gen, cfg.bcd())
        wall = time.perf_counter() - t0
        X_rec = _forward(gen, C_rec, mu, nu, gamma).plan
    except BregIOTError as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    c_err, c_kind = rel_err(C, C_rec)
    x_err, _ = rel_err(X, X_rec)
    rec.update(
        ok=True,
        c_err=c_err,
        c_err_kind=c_kind,
        x_err=x_err,
        wall_time=wall,
        iterations=rep.iterations,
        converged=rep.converged,
        final_kkt=rep.extra["final_kkt"],
    )
    return rec


def exp_random_marginals(cfg: ExperimentConfig) -> dict:
    """Forward plan from a random ground truth, BCD inversion, re-solve.

    Reports mean ``C err``, ``X err`` and BCD wall time over the successful
    trials; failed trials keep their error message.
    """
    if get_set(cfg.cset).kind not in ("sh", "ed"):
        raise ValueError("random-marginal experiment supports the sh and ed sets")
    trials = [random_marginals_trial(cfg, k) for k in range(cfg.trials)]
    good = [t for t in trials if t["ok"]]
    agg = {
        "c_err": _summary(t["c_err"] for t in good),
        "x_err": _summary(t["x_err"] for t in good),
        "wall_time": _summary(t["wall_time"] for t in good),
        "failed": len(trials) - len(good),
        "converged": sum(bool(t["converged"]) for t in good),
    }
    return _report(cfg, trials, agg)


# -- stability bound ------------------------------------------------------------

def exp_stability(cfg: ExperimentConfig) -> dict:
    """Check ``||C_hat - C||_inf <= 2 gamma ||phi'(X_hat) - phi'(X)||_inf``.

    For each ``gamma`` in the grid and each trial: random marginals and
    ``C`` in ``Sh``, a perturbation ``Proj_Sh(C + delta N)`` with ``delta =
    0.01 / ||N||_inf``, and both forward plans.  ``phi'`` is evaluated at
    ``X + 1e-20``.  A trial passes when the bound holds up to ``1e-9``.
    """
    gen = get_generator(cfg.gen)
    gammas = np.atleast_1d(np.asarray(cfg.gamma, dtype=float))
    eps = float(cfg.options.get("eps", STABILITY_EPS))
    tol = float(cfg.options.get("tol", STABILITY_TOL))
    sh = Sh()
    trials = []
    buckets = []
    for gi, gamma in enumerate(gammas):
        recs = []
        for k in range(cfg.trials):
            idx = gi * cfg.trials + k
            rng = trial_rng(cfg.seed, idx)
            rec = {"trial": idx, "sub_seed": [cfg.seed, idx], "gamma": float(gamma), "ok": False}
            mu, nu = sample_marginals(rng, cfg.n)
            C = sample_cost(rng, cfg.n, "sh")
            N = rng.standard_normal((cfg.n, cfg.n))
            C_hat = sh.project(C + (0.01 / np.max(np.abs(N))) * N)
            try:
                sol = _forward(gen, C, mu, nu, gamma)
                warm = DualPotentials(sol.potentials.u, sol.potentials.v)
                sol_hat = _forward(gen, C_hat, mu, nu, gamma, warm)
                rhs = stability_rhs(gen, sol.plan, sol_hat.plan, gamma, eps=eps)
            except BregIOTError as exc:
                rec["error"] = f"{type(exc).__name__}: {exc}"
                recs.append(rec)
                continue
            lhs = float(np.max(np.abs(C_hat - C)))
            rec.update(
                ok=True,
                lhs=lhs,
                rhs=rhs,
                ratio=rhs / lhs if lhs > 0 else math.inf,
                passed=bool(lhs <= rhs + tol),
            )
            recs.append(rec)
        good = [r for r in recs if r["ok"]]
        ratios = [r["ratio"] for r in good]
        buckets.append(
            {
                "gamma": float(gamma),
                "pass_rate": sum(r["passed"] for r in good) / len(recs),
                "failed": len(recs) - len(good),
                "ratio": _summary(ratios),
            }
        )
        trials.extend(recs)
    means = [b["ratio"]["mean"] for b in buckets]
    rho = math.nan
    if len(buckets) > 1 and all(np.isfinite(means)):
        from scipy.stats import spearmanr

        rho = float(spearmanr([b["gamma"] for b in buckets], means).statistic)
    agg = {
        "buckets": buckets,
        "pass_rate": sum(bool(t.get("passed")) for t in trials) / len(trials),
        "min_ratio": min((b["ratio"]["min"] for b in buckets), default=math.nan),
        "spearman_gamma_mean_ratio": rho,
    }
    return _report(cfg, trials, agg)


# -- penalty-weight sweep ---------------------------------------------------------

def exp_lambda_sweep(cfg: ExperimentConfig) -> dict:
    """Recovery error of one fixed instance across the ``lam`` grid."""
    gen = get_generator(cfg.gen)
    gamma = float(np.atleast_1d(cfg.gamma)[0])
    lams = np.atleast_1d(np.asarray(cfg.lam, dtype=float))
    rng = trial_rng(cfg.seed, 0)
    mu, nu = sample_marginals(rng, cfg.n)
    C = sample_cost(rng, cfg.n, cfg.cset)
    X = _forward(gen, C, mu, nu, gamma).plan
    trials = []
    for k, lam in enumerate(lams):
        rec = {"trial": k, "sub_seed": [cfg.seed, 0], "lambda": float(lam), "ok": False}
        try:
            C_rec, _, _, rep = solve_iot(X, mu, nu, gamma, float(lam), cfg.cset, gen, cfg.bcd())
            X_rec = _forward(gen, C_rec, mu, nu, gamma).plan
        except BregIOTError as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
            trials.append(rec)
            continue
        rec.update(
            ok=True,
            c_err=rel_err(C, C_rec)[0],
            x_err=rel_err(X, X_rec)[0],
            iterations=rep.iterations,
            final_kkt=rep.extra["final_kkt"],
        )
        trials.append(rec)
    agg = {
        "lambda": [float(x) for x in lams],
        "c_err": [t.get("c_err", math.nan) for t in trials],
        "x_err": [t.get("x_err", math.nan) for t in trials],
    }
    return _report(cfg, trials, agg)
