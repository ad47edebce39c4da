"""Inverse transport by inexact block coordinate descent.

The cost is recovered by minimising the jointly convex objective

    E(u, v, C) = sum psi(Z) - <Z, X_hat>,    Z = (u (+) v - C) / gamma,

optionally with the quadratic penalty ``lam * (|u|^2 + |v|^2 + |C|_F^2) / 2``,
over ``C`` in a closed convex set.  Each sweep updates ``u``, ``v`` and ``C``
in turn with a diagonal Newton step and Armijo backtracking; the ``C`` step is
followed by a projection onto the constraint set.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, GeneratorError, LineSearchFailure, MaxIterationsExceeded
from .generators import BregmanGenerator, get_generator, target_set_contains
from .report import SolveReport
from .sets import ConstraintSet, get_set

__all__ = [
    "IotState",
    "BcdConfig",
    "StepRecord",
    "objective_E",
    "objective_E_lambda",
    "block_gradient_hessdiag",
    "relative_kkt",
    "bcd_step",
    "solve_iot",
    "tail_ratio",
]

# Floor added to diagonal Hessian entries (matters only when lam = 0).
HESS_FLOOR = 1e-12
ALPHA_MIN = 1e-16


@dataclass(frozen=True)
class IotState:
    u: np.ndarray
    v: np.ndarray
    C: np.ndarray
    X_hat: np.ndarray
    gamma: float
    lam: float
    cset: ConstraintSet
    gen: BregmanGenerator

    @property
    def n(self):
        return self.u.size

    def Z(self, u=None, v=None, C=None):
        u = self.u if u is None else u
        v = self.v if v is None else v
        C = self.C if C is None else C
        return (u[:, None] + v[None, :] - C) / self.gamma


@dataclass(frozen=True)
class BcdConfig:
    max_iters: int = 100
    kkt_tol: float = 1e-6
    armijo_beta: float = 0.5
    armijo_c1: float = 1e-4
    c_block_mode: str = "newton"
    gauge_fix_un: bool = False
    accelerate: bool = True
    raise_on_max_iter: bool = False

    def __post_init__(self):
        if not 0 < self.armijo_beta < 1:
            raise ValueError("armijo_beta must lie in (0, 1)")
        if not 0 < self.armijo_c1 < 0.5:
            raise ValueError("armijo_c1 must lie in (0, 1/2)")
        if self.c_block_mode not in ("newton", "projected_gradient"):
            raise ValueError(f"unknown C-block mode {self.c_block_mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class StepRecord:
    alpha: dict = field(default_factory=dict)
    decrease: dict = field(default_factory=dict)
    step_sq: dict = field(default_factory=dict)
    c_mode: str = ""
    objective: float = math.nan
    kkt: float = math.nan
    max_hess: float = 0.0

    def to_dict(self):
        return {
            "alpha": dict(self.alpha),
            "decrease": dict(self.decrease),
            "step_sq": dict(self.step_sq),
            "c_mode": self.c_mode,
            "objective": self.objective,
            "kkt": self.kkt,
            "max_hess": self.max_hess,
        }


# -- objective ---------------------------------------------------------------

def _E_raw(gen, Z, X_hat):
    """Objective E at scaled argument ``Z``; ``inf`` outside dom psi."""
    if not np.all(gen.in_psi_domain(Z)):
        return math.inf
    return float(np.sum(gen._psi(Z)) - np.sum(Z * X_hat))


def _penalty(lam, u, v, C):
    if lam == 0:
        return 0.0
    return 0.5 * lam * float(u @ u + v @ v + np.sum(C * C))


def _f(state, u, v, C):
    return _E_raw(state.gen, state.Z(u, v, C), state.X_hat) + _penalty(state.lam, u, v, C)


def objective_E(state: IotState) -> float:
    """``sum psi(Z) - <Z, X_hat>``; raises DomainError outside dom psi."""
    Z = state.Z()
    return float(np.sum(state.gen.psi(Z)) - np.sum(Z * state.X_hat))


def objective_E_lambda(state: IotState) -> float:
    return objective_E(state) + _penalty(state.lam, state.u, state.v, state.C)


def block_gradient_hessdiag(state: IotState, block: str):
    """Exact gradient and diagonal Hessian of ``E_lambda`` in one block.

    Parameters
    ----------
    state : IotState
    block : {'u', 'v', 'C'}

    Returns
    -------
    g, h : ndarray
        Same shape as the block.  ``h`` is strictly positive.
    """
    gen, gamma, lam = state.gen, state.gamma, state.lam
    Z = state.Z()
    P1 = gen.psi_prime(Z)
    P2 = gen.psi_second(Z)
    X = state.X_hat
    if block == "u":
        g = (P1.sum(axis=1) - X.sum(axis=1)) / gamma + lam * state.u
        h = P2.sum(axis=1) / gamma**2 + lam
    elif block == "v":
        g = (P1.sum(axis=0) - X.sum(axis=0)) / gamma + lam * state.v
        h = P2.sum(axis=0) / gamma**2 + lam
    elif block == "C":
        g = (X - P1) / gamma + lam * state.C
        h = P2 / gamma**2 + lam
    else:
        raise ValueError(f"unknown block {block!r}")
    return g, h + HESS_FLOOR


def relative_kkt(state: IotState) -> float:
    """Largest scaled stationarity defect over the three blocks."""
    gu, _ = block_gradient_hessdiag(state, "u")
    gv, _ = block_gradient_hessdiag(state, "v")
    gC, _ = block_gradient_hessdiag(state, "C")
    C = state.C
    rc = np.max(np.abs(C - state.cset.project(C - gC))) / (1.0 + np.max(np.abs(C)))
    ru = np.max(np.abs(gu)) / (1.0 + np.max(np.abs(state.u)))
    rv = np.max(np.abs(gv)) / (1.0 + np.max(np.abs(state.v)))
    return float(max(ru, rv, rc))


# -- one sweep ---------------------------------------------------------------

def _negligible(pred, f):
    """Predicted decrease indistinguishable from roundoff in ``f``."""
    return pred <= 1e-15 * (1.0 + abs(f))


def _potential_block(state, cfg, block, f0, rec):
    g, h = block_gradient_hessdiag(state, block)
    d = -g / h
    if block == "u" and cfg.gauge_fix_un:
        d[-1] = 0.0
    x0 = state.u if block == "u" else state.v
    gd = float(g @ d)
    rec.max_hess = max(rec.max_hess, float(h.max()))

    def fun(x):
        return _f(state, x, state.v, state.C) if block == "u" else _f(state, state.u, x, state.C)

    alpha = 1.0
    if _negligible(-gd, f0):
        rec.alpha[block], rec.decrease[block], rec.step_sq[block] = 0.0, 0.0, 0.0
        return state, f0
    while True:
        x = x0 + alpha * d
        fx = fun(x)
        if fx <= f0 + cfg.armijo_c1 * alpha * gd:
            break
        alpha *= cfg.armijo_beta
        if _negligible(-alpha * gd, f0):
            rec.alpha[block], rec.decrease[block], rec.step_sq[block] = 0.0, 0.0, 0.0
            return state, f0
        if alpha < ALPHA_MIN:
            raise LineSearchFailure(
                f"Armijo step underflow in block {block}", state=state, block=block
            )
    rec.alpha[block] = alpha
    rec.decrease[block] = f0 - fx
    rec.step_sq[block] = float(np.sum((x - x0) ** 2))
    new = replace(state, u=x) if block == "u" else replace(state, v=x)
    return new, fx


def _cost_block(state, cfg, f0, rec):
    g, h = block_gradient_hessdiag(state, "C")
    rec.max_hess = max(rec.max_hess, float(h.max()))
    P = state.cset.project
    C0 = state.C
    curv = min(state.lam, 1.0)

    def fun(C):
        return _f(state, state.u, state.v, C)

    def done(C, alpha, fx, mode):
        rec.alpha["C"] = alpha
        rec.decrease["C"] = f0 - fx
        rec.step_sq["C"] = float(np.sum((C - C0) ** 2))
        rec.c_mode = mode
        return replace(state, C=C), fx

    if cfg.c_block_mode == "newton":
        D = -g / h
        scaled = state.cset.project_scaled(C0, h) is not None
        alpha = 1.0
        while alpha >= 1e-4:
            # the H-metric projection keeps the scaled step a descent step
            C = state.cset.project_scaled(C0 + alpha * D, h) if scaled else P(C0 + alpha * D)
            delta = C - C0
            slope = float(np.sum(g * delta))
            if _negligible(-slope, f0):
                break
            # accept only clear descent steps; otherwise fall back below
            if -slope >= curv * float(np.sum(delta * delta)):
                fx = fun(C)
                if fx <= f0 + cfg.armijo_c1 * slope:
                    return done(C, alpha, fx, "newton")
            alpha *= cfg.armijo_beta

    alpha = 1.0
    while True:
        C = P(C0 - alpha * g)
        delta = C - C0
        slope = float(np.sum(g * delta))
        if _negligible(-slope, f0):
            rec.alpha["C"], rec.decrease["C"], rec.step_sq["C"] = 0.0, 0.0, 0.0
            rec.c_mode = "stationary"
            return state, f0
        fx = fun(C)
        if fx <= f0 + cfg.armijo_c1 * slope:
            return done(C, alpha, fx, "projected_gradient")
        alpha *= cfg.armijo_beta
        if alpha < ALPHA_MIN:
            raise LineSearchFailure(
                "Armijo step underflow in block C", state=state, block="C"
            )


def _balance_gauge(state, f0, rec):
    u, v = state.u, state.v
    a = (v.sum() - u.sum()) / (u.size + v.size)
    if a == 0:
        rec.decrease["gauge"], rec.step_sq["gauge"] = 0.0, 0.0
        return state, f0
    new = replace(state, u=u + a, v=v - a)
    f = _f(new, new.u, new.v, new.C)
    if not f <= f0:  # roundoff; keep the old point
        rec.decrease["gauge"], rec.step_sq["gauge"] = 0.0, 0.0
        return state, f0
    rec.decrease["gauge"] = f0 - f
    rec.step_sq["gauge"] = (u.size + v.size) * a * a
    return new, f


def _hollow_block(state, cfg, f0, rec):
    """Diagonal Newton step along ``(a, a, a (+) a off the diagonal)``.

    Such moves change ``Z`` only on its diagonal, so the u, v and C blocks
    see them as an almost flat valley and resolve them slowly.
    """
    gen, gamma, lam = state.gen, state.gamma, state.lam
    C = state.C
    n = C.shape[0]
    zd = np.diag(state.Z())
    if not np.all(gen.in_psi_domain(zd)):
        return state, f0
    off = C.sum(axis=1) - np.diag(C)
    g = (2.0 / gamma) * (gen._psi1(zd) - np.diag(state.X_hat))
    g = g + lam * (state.u + state.v + 2.0 * off)
    h = 4.0 * gen._psi2(zd) / gamma**2 + 2.0 * n * lam + HESS_FLOOR
    d = -g / h
    if cfg.gauge_fix_un:
        d[-1] = 0.0
    gd = float(g @ d)
    if _negligible(-gd, f0):
        return state, f0
    alpha = 1.0
    while True:
        S = alpha * (d[:, None] + d[None, :])
        np.fill_diagonal(S, 0.0)
        Cn = C + S
        ok = state.cset.hollow_shift == "free" or np.all(Cn >= 0)
        new = replace(state, u=state.u + alpha * d, v=state.v + alpha * d, C=Cn)
        f = _f(new, new.u, new.v, Cn) if ok else math.inf
        if f <= f0 + cfg.armijo_c1 * alpha * gd:
            rec.alpha["hollow"] = alpha
            rec.decrease["hollow"] = f0 - f
            return new, f
        alpha *= cfg.armijo_beta
        if _negligible(-alpha * gd, f0):
            return state, f0


def bcd_step(state: IotState, cfg: BcdConfig | None = None, f0=None):
    """One sweep ``u -> v -> C``.  Returns ``(new_state, StepRecord)``.

    With ``lam > 0`` the sweep opens with an exact minimisation along the
    direction ``(1, -1, 0)``, on which ``E`` is constant.  Without it that
    direction is only resolved at a rate of order ``1 - lam / H``.  With
    ``cfg.accelerate`` and a set closed under symmetric shifts of the
    off-diagonal, a further step along those shifts follows.

    Every accepted block step satisfies the Armijo test on ``E_lambda``, so the
    objective never increases.  A block whose predicted decrease is at
    roundoff level is left unchanged (``alpha = 0`` in the record).
    """
    cfg = cfg or BcdConfig()
    rec = StepRecord()
    f = objective_E_lambda(state) if f0 is None else f0
    if state.lam > 0 and not cfg.gauge_fix_un:
        state, f = _balance_gauge(state, f, rec)
    if cfg.accelerate and state.cset.hollow_shift and state.C.shape[0] == state.C.shape[1]:
        state, f = _hollow_block(state, cfg, f, rec)
    state, f = _potential_block(state, cfg, "u", f, rec)
    state, f = _potential_block(state, cfg, "v", f, rec)
    state, f = _cost_block(state, cfg, f, rec)
    rec.objective = f
    return state, rec


# -- driver ------------------------------------------------------------------

def tail_ratio(objective, grad_norm, lam, window=10):
    """Largest ratio ``(f_{k+1} - f*) / (f_k - f*)`` over the last ``window`` steps.

    ``f*`` is estimated as ``f_final - grad_norm**2 / (2 lam)``, a lower
    bound on the optimum for a ``lam``-strongly convex objective.
    """
    f = np.asarray(objective, dtype=float)
    if lam <= 0 or f.size < 2:
        return math.nan
    fstar = f[-1] - grad_norm**2 / (2.0 * lam)
    gaps = f - fstar
    tail = gaps[-(window + 1):]
    ratios = [b / a for a, b in zip(tail[:-1], tail[1:]) if a > 0]
    return float(max(ratios)) if ratios else math.nan


def _stationarity_norm(state):
    gu, _ = block_gradient_hessdiag(state, "u")
    gv, _ = block_gradient_hessdiag(state, "v")
    gC, _ = block_gradient_hessdiag(state, "C")
    mC = state.C - state.cset.project(state.C - gC)
    return float(np.sqrt(gu @ gu + gv @ gv + np.sum(mC * mC)))


def solve_iot(X_hat, mu, nu, gamma, lam, cset="sh", gen="entropy", cfg=None,
              zero_entries="raise", init=None):
    """Recover a cost matrix from an observed plan.

    Parameters
    ----------
    X_hat : (n, n) array
        Observed plan with marginals ``mu`` and ``nu``.
    gamma : float
        Regularization strength of the forward problem.
    lam : float
        Weight of the quadratic penalty, ``>= 0``.
    cset : ConstraintSet or str
    gen : BregmanGenerator or str
        Must have ``phi'(0+) = -inf``.
    cfg : BcdConfig, optional
    zero_entries : {'raise', 'allow'}
        Zero entries of ``X_hat`` lie outside the range of the forward map for
        these generators.  ``'allow'`` keeps them (empirical count data).
    init : tuple (u, v, C), optional
        Starting point; defaults to ``u = v = 0`` and ``C = P(0)``.

    Returns
    -------
    C, u, v : ndarray
    report : SolveReport
        ``objective`` holds ``E_lambda`` before the first sweep and after each
        sweep, ``residuals`` the relative KKT residual after each sweep.
    """
    gen = get_generator(gen)
    cset = get_set(cset)
    cfg = cfg or BcdConfig()
    if gen.phi0_prime > -math.inf:
        raise GeneratorError(
            f"{gen.id}: inversion needs phi'(0+) = -inf; use the closed-form "
            "construction for generators with a finite slope at zero"
        )
    if lam < 0 or not gamma > 0:
        raise ValueError("need gamma > 0 and lam >= 0")
    X = np.array(X_hat, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if zero_entries not in ("raise", "allow"):
        raise ValueError("zero_entries must be 'raise' or 'allow'")
    if zero_entries == "allow":
        ok = target_set_contains("quadratic", X, mu, nu, tol=1e-8)
    else:
        ok = target_set_contains(gen, X, mu, nu, tol=1e-8)
    if not ok:
        raise DomainError(f"observed plan is outside the target set of {gen.id}")
    n, m = X.shape
    if init is None:
        u, v, C = np.zeros(n), np.zeros(m), cset.project(np.zeros((n, m)))
    else:
        u, v, C = (np.array(a, dtype=float) for a in init)
    state = IotState(u, v, C, X, float(gamma), float(lam), cset, gen)

    report = SolveReport(solver=f"bcd-{cfg.c_block_mode}")
    w1 = cfg.armijo_c1 * min(lam, 1.0) * 0.99
    f = objective_E_lambda(state)
    report.objective.append(f)
    lhat = 0.0
    min_alpha = math.inf
    decrease_ok = True
    start = time.perf_counter()
    r = relative_kkt(state)
    it = 0
    while r > cfg.kkt_tol and it < cfg.max_iters:
        it += 1
        new, rec = bcd_step(state, cfg, f)
        for b in ("u", "v", "C"):
            slack = 1e-13 * (1.0 + abs(f))
            if lam > 0 and rec.decrease.get(b, 0.0) < w1 * rec.step_sq.get(b, 0.0) - slack:
                decrease_ok = False
        state, f = new, rec.objective
        r = relative_kkt(state)
        rec.kkt = r
        lhat = max(lhat, rec.max_hess)
        for b in ("u", "v", "C"):
            a = rec.alpha.get(b, 0.0)
            if a > 0:
                min_alpha = min(min_alpha, a)
        report.objective.append(f)
        report.residuals.append(r)
        report.steps.append(rec.to_dict())
    report.iterations = it
    report.wall_time = time.perf_counter() - start
    report.converged = r <= cfg.kkt_tol
    report.termination = "kkt_tol" if report.converged else "max_iters"
    floor = min(1.0, 2.0 * cfg.armijo_beta * (1.0 - cfg.armijo_c1) / lhat) if lhat > 0 else 1.0
    gnorm = _stationarity_norm(state)
    report.extra.update(
        {
            "final_kkt": r,
            "gamma": float(gamma),
            "lambda": float(lam),
            "generator": gen.id,
            "set": cset.id,
            "sufficient_decrease_ok": decrease_ok if lam > 0 else None,
            "w1": w1,
            "L_hat": lhat,
            "alpha_floor": floor,
            "min_alpha": None if min_alpha == math.inf else min_alpha,
            "alpha_floor_ok": bool(min_alpha >= floor * (1 - 1e-12)) if min_alpha < math.inf else True,
            "stationarity_norm": gnorm,
            "tail_ratio": tail_ratio(report.objective, gnorm, lam) if report.converged else math.nan,
        }
    )
    if not report.converged and cfg.raise_on_max_iter:
        raise MaxIterationsExceeded(
            f"BCD stopped at max_iters={cfg.max_iters} with KKT residual {r:.3e}",
            report=report,
            residual=r,
        )
    return state.C, state.u, state.v, report
