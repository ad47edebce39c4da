"""Forward Bregman-regularized optimal transport.

Solves ``min_{X in U(mu, nu)} <C, X> + gamma * phi(X)`` through its dual by
alternating exact minimisation over the row potentials ``u`` and the column
potentials ``v``.  Each half-sweep solves, row by row, the monotone scalar
equation ``sum_j (psi'((u_i + v_j - C_ij) / gamma))_+ = mu_i``.  For the
entropy generator this is the Sinkhorn log-domain update and is done in
closed form.  Solves still short of the tolerance after a few sweeps
interleave regularized (semismooth) Newton steps on the dual, which matters
for small ``gamma`` and for sparse plans of the quadratic generator.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from . import _kernels
from ._kernels import solve_rows_compiled, water_fill
from .errors import DimensionError, DomainError, MaxIterationsExceeded
from .generators import (
    BetaPotential,
    BregmanGenerator,
    Burg,
    Entropy,
    FermiDirac,
    Quadratic,
    get_generator,
)
from .report import SolveReport

__all__ = [
    "TransportProblem",
    "DualPotentials",
    "ForwardSolution",
    "SolverConfig",
    "scaled_argument",
    "plan_from_potentials",
    "dual_objective",
    "dual_objective_general",
    "dual_gradient",
    "solve_forward",
    "kkt_residual",
    "marginal_error",
]

MARGINAL_SUM_TOL = 1e-12
# Relative gap kept from a finite upper end of dom psi while bracketing.
CAP_MARGIN = 1e-9
# Sweeps before regularized Newton steps are interleaved.
NEWTON_AFTER = 20


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TransportProblem:
    C: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    gamma: float
    gen: BregmanGenerator = field(default_factory=Entropy)

    def __post_init__(self):
        C, mu, nu = _frozen(self.C), _frozen(self.mu), _frozen(self.nu)
        if C.ndim != 2 or C.shape != (mu.size, nu.size) or mu.ndim != 1 or nu.ndim != 1:
            raise DimensionError(
                f"cost shape {C.shape} incompatible with marginals "
                f"{mu.shape}, {nu.shape}"
            )
        if not np.all(np.isfinite(C)):
            raise ValueError("cost matrix has non-finite entries")
        for name, m in (("mu", mu), ("nu", nu)):
            if np.any(m <= 0):
                raise ValueError(f"{name} must have strictly positive entries")
            if abs(m.sum() - 1.0) > MARGINAL_SUM_TOL:
                raise ValueError(f"{name} must sum to 1 (got {m.sum()!r})")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "gen", get_generator(self.gen))

    @property
    def n(self) -> int:
        return self.mu.size

    def with_cost(self, C) -> "TransportProblem":
        return TransportProblem(C, self.mu, self.nu, self.gamma, self.gen)


@dataclass(frozen=True)
class DualPotentials:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u, v = _frozen(self.u), _frozen(self.v)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("potentials must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def tensor_sum(self) -> np.ndarray:
        return self.u[:, None] + self.v[None, :]


@dataclass(frozen=True)
class ForwardSolution:
    plan: np.ndarray
    potentials: DualPotentials
    report: SolveReport

    def __post_init__(self):
        object.__setattr__(self, "plan", _frozen(self.plan))


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule: ``||X 1 - mu||_inf + ||X^T 1 - nu||_inf <= tol``."""

    tol: float = 1e-10
    max_iter: int = 10_000
    warm_start: DualPotentials | None = None
    record_objective: bool = False


def scaled_argument(prob: TransportProblem, pots: DualPotentials) -> np.ndarray:
    """``(u (+) v - C) / gamma``."""
    return (pots.tensor_sum() - prob.C) / prob.gamma


def _check_psi_domain(gen, Z):
    ok = gen.in_psi_domain(Z)
    if not np.all(ok):
        idx = tuple(int(i) for i in np.argwhere(~ok)[0])
        raise DomainError(
            f"{gen.id}: scaled potential {Z[idx]!r} at {idx} outside dom psi",
            index=idx,
        )


def plan_from_potentials(prob: TransportProblem, pots: DualPotentials) -> np.ndarray:
    """Primal plan ``(psi'((u (+) v - C) / gamma))_+`` recovered from potentials."""
    gen = prob.gen
    Z = scaled_argument(prob, pots)
    _check_psi_domain(gen, Z)
    X = gen._psi1(Z)
    if gen.phi0_prime > -math.inf:
        X = np.maximum(X, 0.0)
    return X


def dual_objective(prob: TransportProblem, pots: DualPotentials, target) -> float:
    """``sum psi(Z) - <Z, target>`` with ``Z = (u (+) v - C) / gamma``.

    This is the dual for generators with ``phi'(0+) = -inf``; ``target`` is
    any plan in ``U(mu, nu)``.  Its gradient is ``dual_gradient / gamma``.
    """
    gen = prob.gen
    Z = scaled_argument(prob, pots)
    _check_psi_domain(gen, Z)
    target = np.asarray(target, dtype=float)
    return float(np.sum(gen._psi(Z)) - np.sum(Z * target))


def dual_objective_general(prob: TransportProblem, pots: DualPotentials) -> float:
    """Clamped dual valid for any generator (finite ``phi'(0+)`` included)::

        <u (+) v - C, X+> - <u, mu> - <v, nu> - gamma * phi(X+)
    """
    gen = prob.gen
    X = plan_from_potentials(prob, pots)
    Y = pots.tensor_sum() - prob.C
    return float(
        np.sum(Y * X)
        - pots.u @ prob.mu
        - pots.v @ prob.nu
        - prob.gamma * np.sum(gen._phi(X))
    )


def dual_gradient(prob: TransportProblem, pots: DualPotentials):
    """Gradient of :func:`dual_objective_general`: the marginal defects."""
    X = plan_from_potentials(prob, pots)
    return X.sum(axis=1) - prob.mu, X.sum(axis=0) - prob.nu


def marginal_error(X, mu, nu) -> tuple[float, float]:
    X = np.asarray(X)
    return (
        float(np.max(np.abs(X.sum(axis=1) - mu))),
        float(np.max(np.abs(X.sum(axis=0) - nu))),
    )


def kkt_residual(prob: TransportProblem, sol: ForwardSolution) -> float:
    """Largest of the two marginal defects and the plan/potential mismatch."""
    row, col = marginal_error(sol.plan, prob.mu, prob.nu)
    gap = float(np.max(np.abs(sol.plan - plan_from_potentials(prob, sol.potentials))))
    return max(row, col, gap)


# -- per-row scalar solves ---------------------------------------------------

_KERNEL_CODES = {
    Burg: _kernels.BURG,
    FermiDirac: _kernels.FERMI_DIRAC,
    BetaPotential: _kernels.BETA,
}


def _row_fun(gen, clamp, A, gamma, target, t):
    Z = (t[:, None] + A) / gamma
    x = gen._psi1(Z)
    d = gen._psi2(Z)
    if clamp:
        pos = x > 0
        x = np.where(pos, x, 0.0)
        d = np.where(pos, d, 0.0)
    return x.sum(axis=1) - target, d.sum(axis=1) / gamma


def solve_rows(gen, A, target, gamma, t0, max_newton=200):
    """Solve ``sum_j (psi'((t_i + A_ij) / gamma))_+ = target_i`` for every row.

    Safeguarded Newton inside a bracket found by step doubling from ``t0``.
    When dom psi is bounded above, ``t_i`` is capped so every argument stays
    a relative ``CAP_MARGIN`` below the bound; a target unreachable under the
    cap raises :class:`DomainError`.
    """
    gen = get_generator(gen)
    clamp = gen.phi0_prime > -math.inf
    n = A.shape[0]
    upper = gen.psi_upper
    if math.isfinite(upper):
        safe = upper - CAP_MARGIN * (1.0 + abs(upper))
        cap = gamma * safe - A.max(axis=1)
    else:
        cap = np.full(n, np.inf)

    def F(t):
        return _row_fun(gen, clamp, A, gamma, target, t)

    t = np.minimum(np.asarray(t0, dtype=float), cap)
    f, fp = F(t)
    lo = np.where(f < 0, t, -np.inf)
    hi = np.where(f >= 0, t, np.inf)

    # bracket by doubling in scaled units
    step = np.full(n, gamma)
    for _ in range(2100):
        need_hi = ~np.isfinite(hi)
        need_lo = ~np.isfinite(lo)
        if not (need_hi.any() or need_lo.any()):
            break
        trial = np.where(need_hi, np.minimum(lo + step, cap), hi - step)
        trial = np.where(need_hi | need_lo, trial, t)
        ft, _ = F(trial)
        stuck = need_hi & (trial >= cap) & (ft < 0)
        if stuck.any():
            i = int(np.flatnonzero(stuck)[0])
            raise DomainError(
                f"{gen.id}: marginal {target[i]!r} of row {i} unreachable "
                "inside dom psi",
                index=(i,),
            )
        hi = np.where(need_hi & (ft >= 0), trial, hi)
        lo = np.where(need_hi & (ft < 0), trial, lo)
        lo = np.where(need_lo & (ft < 0), trial, lo)
        hi = np.where(need_lo & (ft >= 0), trial, hi)
        step = step * 2.0
    else:  # pragma: no cover - needs an absurd cost scale
        raise DomainError(f"{gen.id}: failed to bracket row equations")

    # start from the bracket end with the smaller residual
    t = np.where(np.isfinite(hi) & np.isfinite(lo), np.clip(t, lo, hi), t)
    atol = 1e-15
    active = np.ones(n, dtype=bool)
    for _ in range(max_newton):
        f, fp = F(t)
        done = np.abs(f) <= atol * np.maximum(1.0, target)
        lo = np.where(f < 0, np.maximum(lo, t), lo)
        hi = np.where(f > 0, np.minimum(hi, t), hi)
        width = hi - lo
        done |= width <= 4 * np.finfo(float).eps * (np.abs(t) + gamma)
        active = ~done
        if not active.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = t - f / fp
        mid = 0.5 * (lo + hi)
        ok = (fp > 0) & (newton > lo) & (newton < hi)
        t = np.where(active, np.where(ok, newton, mid), t)
    return t


def _entropy_rows(A, target, gamma):
    Z = A / gamma
    zmax = Z.max(axis=1)
    lse = np.log(np.exp(Z - zmax[:, None]).sum(axis=1)) + zmax
    return gamma * (np.log(target) - lse)


def _row_update(gen, A, target, gamma, t0):
    """Dispatch a half-sweep to the fastest exact row solver for ``gen``."""
    if isinstance(gen, Entropy):
        return _entropy_rows(A, target, gamma)
    if isinstance(gen, Quadratic):
        return water_fill(A, target, gamma)
    code = _KERNEL_CODES.get(type(gen))
    if code is None:
        return solve_rows(gen, A, target, gamma, t0)
    upper = gen.psi_upper
    if math.isfinite(upper):
        cap = gamma * (upper - CAP_MARGIN * (1.0 + abs(upper))) - A.max(axis=1)
    else:
        cap = np.full(A.shape[0], np.inf)
    beta = getattr(gen, "beta", 0.0)
    t, bad = solve_rows_compiled(
        code, beta, gen.phi0_prime > -math.inf, np.ascontiguousarray(A),
        target, gamma, np.asarray(t0, dtype=float), cap,
    )
    if bad >= 0:
        raise DomainError(
            f"{gen.id}: marginal {target[bad]!r} of row {bad} unreachable "
            "inside dom psi",
            index=(int(bad),),
        )
    return t


def _newton_step(prob, u, v):
    """Regularized (semismooth) Newton step on the dual.

    Alternating sweeps converge linearly with a rate that degrades as
    ``gamma`` shrinks, and they crawl once a clamped plan is sparse.  The
    generalized Hessian lives on the active entries and is singular along
    the gauge direction and when the support is too thin; adding ``||g|| I``
    fixes both and lets the step activate new entries.  Trial points outside
    dom psi are rejected.  Returns ``None`` when the Armijo search stalls.
    """
    n, m = prob.C.shape
    gamma = prob.gamma
    pots = DualPotentials(u, v)
    Z = scaled_argument(prob, pots)
    X = plan_from_potentials(prob, pots)
    g = np.concatenate([X.sum(axis=1) - prob.mu, X.sum(axis=0) - prob.nu])
    W = np.where(X > 0, prob.gen._psi2(Z), 0.0) / gamma
    H = np.block([[np.diag(W.sum(axis=1)), W], [W.T, np.diag(W.sum(axis=0))]])
    H[np.diag_indices(n + m)] += np.linalg.norm(g)
    try:
        d = -np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return None
    f0 = dual_objective_general(prob, pots)
    gd = float(g @ d)
    if not gd < 0:
        return None
    alpha = 1.0
    while alpha >= 1e-10:
        un, vn = u + alpha * d[:n], v + alpha * d[n:]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                f = dual_objective_general(prob, DualPotentials(un, vn))
        except (DomainError, ValueError):
            f = math.inf
        if f <= f0 + 1e-4 * alpha * gd:
            return un, vn
        alpha *= 0.5
    return None


def solve_forward(prob: TransportProblem, cfg: SolverConfig | None = None) -> ForwardSolution:
    """Alternating dual scaling for the regularized OT problem.

    Returns the plan, the potentials and a :class:`SolveReport` with the
    marginal residual of every sweep.  Raises :class:`MaxIterationsExceeded`
    (carrying the report) when ``cfg.max_iter`` sweeps do not reach
    ``cfg.tol``.
    """
    cfg = cfg or SolverConfig()
    gen = prob.gen
    C, mu, nu, gamma = prob.C, prob.mu, prob.nu, prob.gamma
    n, m = C.shape
    if cfg.warm_start is not None:
        u = np.array(cfg.warm_start.u, dtype=float)
        v = np.array(cfg.warm_start.v, dtype=float)
    else:
        u = np.zeros(n)
        v = np.zeros(m)
    report = SolveReport(solver="alternate-scaling")
    start = time.perf_counter()
    newton_steps = 0
    for it in range(1, cfg.max_iter + 1):
        if it > NEWTON_AFTER:
            step = _newton_step(prob, u, v)
            if step is not None:
                u, v = step
                newton_steps += 1
        u = _row_update(gen, v[None, :] - C, mu, gamma, u)
        v = _row_update(gen, (u[:, None] - C).T, nu, gamma, v)
        pots = DualPotentials(u, v)
        X = plan_from_potentials(prob, pots)
        row, col = marginal_error(X, mu, nu)
        err = row + col
        report.residuals.append(err)
        if cfg.record_objective:
            report.objective.append(dual_objective_general(prob, pots))
        if err <= cfg.tol:
            report.converged = True
            report.termination = "tolerance"
            break
    else:
        report.iterations = cfg.max_iter
        report.termination = "max_iter"
        report.wall_time = time.perf_counter() - start
        raise MaxIterationsExceeded(
            f"forward solve did not reach tol={cfg.tol:g} in {cfg.max_iter} sweeps "
            f"(residual {err:.3e})",
            report=report,
            residual=err,
        )
    report.iterations = it
    report.wall_time = time.perf_counter() - start
    report.extra["newton_steps"] = newton_steps
    return ForwardSolution(X, pots, report)
