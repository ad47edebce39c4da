"""Compiled scalar kernels for the per-row dual updates.

Generator families are addressed by an integer code so one compiled routine
serves all of them:  1 Burg, 2 Fermi-Dirac, 3 beta-potential, 4 quadratic.
"""

import math

import numpy as np
from numba import njit

BURG, FERMI_DIRAC, BETA, QUADRATIC = 1, 2, 3, 4


@njit(cache=True)
def _psi1(kind, beta, z):
    if kind == BURG:
        return 1.0 / (1.0 - z)
    if kind == FERMI_DIRAC:
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    if kind == BETA:
        return (1.0 + (beta - 1.0) * z) ** (1.0 / (beta - 1.0))
    return z


@njit(cache=True)
def _psi2(kind, beta, z):
    if kind == BURG:
        return 1.0 / (1.0 - z) ** 2
    if kind == FERMI_DIRAC:
        s = _psi1(kind, beta, z)
        return s * (1.0 - s)
    if kind == BETA:
        return (1.0 + (beta - 1.0) * z) ** (1.0 / (beta - 1.0) - 1.0)
    return 1.0


@njit(cache=True)
def _row_eval(kind, beta, clamp, a, target, gamma, t):
    f = -target
    fp = 0.0
    for j in range(a.shape[0]):
        z = (t + a[j]) / gamma
        x = _psi1(kind, beta, z)
        if clamp and x <= 0.0:
            continue
        f += x
        fp += _psi2(kind, beta, z)
    return f, fp / gamma


@njit(cache=True)
def solve_rows_compiled(kind, beta, clamp, A, target, gamma, t0, cap):
    """Returns ``(t, bad_row)``; ``bad_row >= 0`` flags an unreachable target."""
    n = A.shape[0]
    out = np.empty(n)
    eps = 2.220446049250313e-16
    for i in range(n):
        a = A[i]
        t = min(t0[i], cap[i])
        f, fp = _row_eval(kind, beta, clamp, a, target[i], gamma, t)
        lo = -np.inf
        hi = np.inf
        if f < 0:
            lo = t
        else:
            hi = t
        step = gamma
        k = 0
        while hi == np.inf:
            trial = min(lo + step, cap[i])
            ft, _ = _row_eval(kind, beta, clamp, a, target[i], gamma, trial)
            if ft >= 0:
                hi = trial
            else:
                if trial >= cap[i]:
                    return out, i
                lo = trial
            step *= 2.0
            k += 1
            if k > 2100:
                return out, i
        while lo == -np.inf:
            trial = hi - step
            ft, _ = _row_eval(kind, beta, clamp, a, target[i], gamma, trial)
            if ft < 0:
                lo = trial
            else:
                hi = trial
            step *= 2.0
            k += 1
            if k > 4200:
                return out, i
        tol = 1e-15 * max(1.0, target[i])
        for _ in range(200):
            f, fp = _row_eval(kind, beta, clamp, a, target[i], gamma, t)
            if abs(f) <= tol:
                break
            if f < 0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
            if hi - lo <= 4.0 * eps * (abs(t) + gamma):
                break
            newton = t - f / fp if fp > 0 else np.nan
            if lo < newton < hi:
                t = newton
            else:
                t = 0.5 * (lo + hi)
        out[i] = t
    return out, -1


def water_fill(A, target, gamma):
    """Exact row solves for the quadratic generator.

    ``sum_j max((t_i + A_ij) / gamma, 0) = target_i`` is piecewise linear in
    ``t_i``; sort each row and pick the active set.
    """
    n, m = A.shape
    s = -np.sort(-A, axis=1)  # descending
    csum = np.cumsum(s, axis=1)
    k = np.arange(1, m + 1)
    # candidate t when the top-k entries are active
    cand = (gamma * target[:, None] - csum) / k
    # valid when the k-th entry is active and the (k+1)-th inactive
    ok = cand + s > 0
    nxt = np.concatenate([s[:, 1:], np.full((n, 1), -np.inf)], axis=1)
    ok &= cand + nxt <= 0
    idx = np.argmax(ok, axis=1)
    return cand[np.arange(n), idx]
