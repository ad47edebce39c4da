"""Closed-form inverse maps for the regularized transport problem.

When ``phi'(0+) = -inf`` the forward map restricted to hollow symmetric
costs is a bijection onto a set of plans, and its inverse is

    G(X)_ij = (gamma / 2) * (phi'(X_ii) + phi'(X_jj) - phi'(X_ij) - phi'(X_ji)).

The same formula inverts the forward map on the metric cone and on squared
Euclidean distance matrices, each onto its own subset of plans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeneratorError, UnsupportedCase
from .forward import SolverConfig, TransportProblem, solve_forward
from .generators import get_generator
from .sets import in_neg_k_cone

__all__ = [
    "g_map",
    "set_membership",
    "construct_cost_nonneg",
    "preimage_representative",
    "stability_rhs",
    "InverseCertificate",
    "closed_form_inverse",
    "forward_plan",
]

SET_IDS = ("sh", "shw", "mc", "ed", "whole_space")


def _grad(gen, X):
    return gen.phi_prime(np.asarray(X, dtype=float))


def g_map(gen, X, gamma) -> np.ndarray:
    """Closed-form inverse ``G`` on hollow symmetric costs.

    Parameters
    ----------
    gen : BregmanGenerator or str
    X : (n, n) array
        Plan with every entry in the interior of ``dom phi``.
    gamma : float
        Regularization strength, positive.

    Returns
    -------
    (n, n) array
        Symmetric with an exactly zero diagonal.

    Raises
    ------
    DomainError
        If an entry of ``X`` is on the boundary of ``dom phi`` (a zero plan
        entry under the entropy, for instance).
    """
    gen = get_generator(gen)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    P = _grad(gen, X)
    d = np.diag(P)
    # both terms are exactly symmetric, so G is too
    G = 0.5 * gamma * ((d[:, None] + d[None, :]) - (P + P.T))
    np.fill_diagonal(G, 0.0)
    return G


def set_membership(gen, X, gamma, set_name, tol=1e-9, w=None) -> bool:
    """Membership of a plan in ``U_phi``, ``U_phi_w``, ``V_phi`` or ``W_phi``.

    ``U_phi`` asks for ``G(X) >= 0`` entrywise.  ``U_phi_w`` shifts ``G`` by
    ``(w_i + w_j) / 2``.  ``V_phi`` adds the triangle inequality on ``G``
    and ``W_phi`` the conditional negative semidefiniteness of ``G``.
    """
    gen = get_generator(gen)
    G = g_map(gen, X, gamma)
    key = str(set_name).lower()
    if key == "u_phi_w":
        if w is None:
            raise ValueError("U_phi_w needs the diagonal vector w")
        w = np.asarray(w, dtype=float)
        return bool(np.all(G + 0.5 * (w[:, None] + w[None, :]) >= -tol))
    if key not in ("u_phi", "v_phi", "w_phi"):
        raise ValueError(f"unknown plan set {set_name!r}")
    if not np.all(G >= -tol):
        return False
    if key == "v_phi":
        P = _grad(gen, X)
        S = P + P.T
        d = np.diag(P)
        # axes (i, j, k): 2 P_kk + S_ij - S_ik - S_jk
        slack = 2.0 * d[None, None, :] + S[:, :, None] - S[:, None, :] - S[None, :, :]
        return bool(slack.min() >= -tol)
    if key == "w_phi":
        return in_neg_k_cone(G, tol)
    return True


def construct_cost_nonneg(gen, X_hat, gamma) -> np.ndarray:
    """A nonnegative cost whose forward plan is ``X_hat``.

    ``C_ij = K - gamma * phi'(X_ij)`` on the support and ``K - gamma *
    phi'(0+)`` off it, with ``K`` the smallest constant that keeps ``C``
    nonnegative.

    Raises
    ------
    UnsupportedCase
        ``X_hat`` has zero entries while ``phi'(0+) = -inf``.
    """
    gen = get_generator(gen)
    X = np.asarray(X_hat, dtype=float)
    support = X > 0
    has_zeros = not np.all(support)
    if has_zeros and gen.phi0_prime == -math.inf:
        raise UnsupportedCase(
            f"{gen.id}: zero plan entries are unreachable when phi'(0+) = -inf"
        )
    P = np.full(X.shape, gen.phi0_prime if has_zeros else 0.0)
    P[support] = gen.phi_prime(X[support])
    K = gamma * P.max()
    C = K - gamma * P
    C[C < 0] = 0.0  # roundoff only
    return C


def preimage_representative(gen, X_hat, gamma, a=None, b=None) -> np.ndarray:
    """Member ``gamma (max phi'(X) - phi'(X)) + a (+) b`` of the preimage of ``X_hat``."""
    gen = get_generator(gen)
    if gen.phi0_prime > -math.inf:
        raise GeneratorError(
            f"{gen.id}: preimage hyperplane needs phi'(0+) = -inf"
        )
    P = _grad(gen, X_hat)
    C = gamma * (P.max() - P)
    n, m = C.shape
    a = np.zeros(n) if a is None else np.asarray(a, dtype=float)
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float)
    return C + a[:, None] + b[None, :]


def stability_rhs(gen, X_hat, X_tilde, gamma, eps=0.0) -> float:
    """``2 gamma max |phi'(X_hat + eps) - phi'(X_tilde + eps)|``.

    ``eps`` floors near-zero entries before differentiation; it defaults to
    zero so that boundary entries raise :class:`DomainError`.
    """
    gen = get_generator(gen)
    A = _grad(gen, np.asarray(X_hat, dtype=float) + eps)
    B = _grad(gen, np.asarray(X_tilde, dtype=float) + eps)
    return float(2.0 * gamma * np.max(np.abs(A - B)))


def forward_plan(gen, C, gamma, mu, nu, cfg=None) -> np.ndarray:
    """Forward plan of cost ``C`` with marginals ``mu``, ``nu``."""
    prob = TransportProblem(C, mu, nu, gamma, get_generator(gen))
    return solve_forward(prob, cfg).plan


@dataclass(frozen=True)
class InverseCertificate:
    cost: np.ndarray
    set_id: str
    membership_ok: bool
    roundtrip_residual: float
    w: np.ndarray | None = None

    def to_dict(self):
        return {
            "set_id": self.set_id,
            "membership_ok": self.membership_ok,
            "roundtrip_residual": self.roundtrip_residual,
            "cost": self.cost.tolist(),
            "w": None if self.w is None else self.w.tolist(),
        }


def closed_form_inverse(gen, X_hat, gamma, set_id="sh", w=None, tol=1e-9,
                        verify=True, cfg: SolverConfig | None = None) -> InverseCertificate:
    """Invert ``X_hat`` onto the chosen cost set and certify the result.

    ``set_id`` is one of ``sh``, ``shw``, ``mc``, ``ed`` or ``whole_space``.
    The certificate reports whether ``X_hat`` lies in the image of that set
    and, with ``verify``, the sup-norm gap between ``X_hat`` and the forward
    plan of the returned cost (marginals taken from ``X_hat``).
    """
    gen = get_generator(gen)
    X = np.asarray(X_hat, dtype=float)
    key = str(set_id).lower()
    if key not in SET_IDS:
        raise ValueError(f"unknown set id {set_id!r}")
    if key == "whole_space":
        C = construct_cost_nonneg(gen, X, gamma)
        ok = True
    else:
        if gen.phi0_prime > -math.inf:
            raise GeneratorError(
                f"{gen.id}: closed-form inverse on {key} needs phi'(0+) = -inf"
            )
        C = g_map(gen, X, gamma)
        if key == "shw":
            if w is None:
                raise ValueError("set 'shw' needs the diagonal vector w")
            w = np.asarray(w, dtype=float)
            C = C + 0.5 * (w[:, None] + w[None, :])
            ok = set_membership(gen, X, gamma, "u_phi_w", tol, w=w)
        else:
            plan_set = {"sh": "u_phi", "mc": "v_phi", "ed": "w_phi"}[key]
            ok = set_membership(gen, X, gamma, plan_set, tol)
    resid = float("nan")
    if verify:
        mu = X.sum(axis=1)
        nu = X.sum(axis=0)
        Y = forward_plan(gen, C, gamma, mu / mu.sum(), nu / nu.sum(), cfg)
        resid = float(np.max(np.abs(Y - X)))
    return InverseCertificate(C, key, bool(ok), resid, w)
