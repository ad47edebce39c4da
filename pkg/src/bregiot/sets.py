"""Closed convex sets of cost matrices, with Euclidean projections.

Each set exposes ``project(M)`` (Frobenius-nearest point) and
``contains(M, tol)``.  The metric cone :class:`MetricCone` only supports
membership.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, EigenFailure

__all__ = [
    "ConstraintSet",
    "Sh",
    "Shw",
    "ED",
    "MetricCone",
    "Affine",
    "Nonnegative",
    "WholeSpace",
    "centering",
    "project_psd",
    "project_psd_cone_complement",
    "in_neg_k_cone",
    "get_set",
    "project",
    "contains",
]


def centering(n: int) -> np.ndarray:
    """``J = I - 11^T / n``."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def _sym(M):
    return 0.5 * (M + M.T)


def _eigh(A):
    try:
        return np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise EigenFailure(str(exc)) from exc


def project_psd(A) -> np.ndarray:
    """Nearest positive semidefinite matrix by eigenvalue clipping."""
    w, V = _eigh(_sym(np.asarray(A, dtype=float)))
    return (V * np.maximum(w, 0.0)) @ V.T


def project_psd_cone_complement(A) -> np.ndarray:
    """Projection onto ``-K``, where ``K`` holds the symmetric matrices that are
    PSD on the complement of the all-ones vector.

    Uses ``P_K(B) = B - JBJ + P_psd(JBJ)`` and ``P_{-K}(A) = -P_K(-A)``.
    """
    A = _sym(np.asarray(A, dtype=float))
    J = centering(A.shape[0])
    JAJ = J @ A @ J
    return A - JAJ - project_psd(-JAJ)


def in_neg_k_cone(M, tol=1e-9) -> bool:
    """``J(-M)J`` PSD up to ``tol * (1 + spectral radius)``."""
    M = np.asarray(M, dtype=float)
    J = centering(M.shape[0])
    w = np.linalg.eigvalsh(_sym(J @ (-M) @ J))
    scale = 1.0 + np.max(np.abs(w))
    return bool(w.min() >= -tol * scale)


class ConstraintSet:
    kind = "abstract"
    projectable = True
    # Whether C + (a (+) a) off the diagonal stays in the set given C' >= 0
    # ("nonneg") or unconditionally ("free").
    hollow_shift = None

    def project(self, M) -> np.ndarray:
        raise NotImplementedError

    def contains(self, M, tol=1e-8) -> bool:
        raise NotImplementedError

    def project_scaled(self, M, H):
        """Projection in the metric ``sum H_ij (.)_ij^2`` (``H > 0``).

        Returns ``None`` for sets without a closed form.
        """
        return None

    def __repr__(self):
        return f"{type(self).__name__}()"

    @property
    def id(self) -> str:
        return self.kind


class WholeSpace(ConstraintSet):
    kind = "free"
    hollow_shift = "free"

    def project(self, M):
        return np.array(M, dtype=float)

    def contains(self, M, tol=1e-8):
        return bool(np.all(np.isfinite(M)))

    def project_scaled(self, M, H):
        return self.project(M)


class Nonnegative(ConstraintSet):
    kind = "nonneg"
    hollow_shift = "nonneg"

    def project(self, M):
        return np.maximum(np.asarray(M, dtype=float), 0.0)

    def contains(self, M, tol=1e-8):
        return bool(np.all(np.asarray(M) >= -tol))

    def project_scaled(self, M, H):
        return self.project(M)


class Shw(ConstraintSet):
    """Nonnegative symmetric matrices with prescribed diagonal ``w >= 0``.

    Symmetry, sign and diagonal constraints decouple entrywise once the input
    is symmetrised, so the projection is closed form.
    """

    kind = "shw"
    hollow_shift = "nonneg"

    def __init__(self, w):
        w = np.array(w, dtype=float)
        if w.ndim != 1 or np.any(w < 0):
            raise ValueError("diagonal w must be a nonnegative vector")
        self.w = w

    @property
    def id(self):
        return "shw:" + ",".join(f"{x:.17g}" for x in self.w)

    def _diag(self, n):
        if self.w.size != n:
            raise ValueError(f"diagonal has length {self.w.size}, matrix is {n}x{n}")
        return self.w

    def project(self, M):
        S = np.maximum(_sym(np.asarray(M, dtype=float)), 0.0)
        np.fill_diagonal(S, self._diag(S.shape[0]))
        return S

    def project_scaled(self, M, H):
        # weighted mean of each symmetric pair, then clamp
        M = np.asarray(M, dtype=float)
        H = np.asarray(H, dtype=float)
        S = np.maximum((H * M + (H * M).T) / (H + H.T), 0.0)
        np.fill_diagonal(S, self._diag(S.shape[0]))
        return S

    def contains(self, M, tol=1e-8):
        M = np.asarray(M, dtype=float)
        return bool(
            np.max(np.abs(M - M.T)) <= tol
            and np.max(np.abs(np.diag(M) - self._diag(M.shape[0]))) <= tol
            and np.all(M >= -tol)
        )

    def __repr__(self):
        return f"Shw(w={self.w!r})"


class Sh(Shw):
    """Nonnegative symmetric matrices with zero diagonal."""

    kind = "sh"

    def __init__(self):
        self.w = None

    @property
    def id(self):
        return "sh"

    def _diag(self, n):
        return np.zeros(n)

    def __repr__(self):
        return "Sh()"


class ED(ConstraintSet):
    """Squared Euclidean distance matrices, ``Sh`` intersected with ``-K``.

    Hollow symmetric matrices in ``-K`` are already entrywise nonnegative, so
    the projection alternates (Dykstra) between the hollow symmetric subspace
    and ``-K``.  Only the cone step needs a correction term.
    """

    kind = "ed"

    def __init__(self, tol=1e-12, max_rounds=5000):
        self.tol = tol
        self.max_rounds = max_rounds
        self._sh = Sh()

    @staticmethod
    def _hollow(M):
        S = _sym(M)
        np.fill_diagonal(S, 0.0)
        return S

    def project(self, M, return_info=False):
        x = _sym(np.asarray(M, dtype=float))
        q = np.zeros_like(x)
        diff = np.inf
        for rounds in range(1, self.max_rounds + 1):
            y = self._hollow(x)
            x_new = project_psd_cone_complement(y + q)
            q = y + q - x_new
            diff = np.max(np.abs(x_new - x))
            x = x_new
            if diff <= self.tol:
                break
        else:
            raise ConvergenceError(
                f"Dykstra did not converge in {self.max_rounds} rounds "
                f"(last change {diff:.3e})",
                residual=diff,
            )
        out = self._sh.project(x)
        if return_info:
            return out, {"rounds": rounds, "change": float(diff)}
        return out

    def contains(self, M, tol=1e-8):
        return self._sh.contains(M, tol) and in_neg_k_cone(M, tol)


class MetricCone(ConstraintSet):
    """``Sh`` plus the triangle inequality.  Membership only."""

    kind = "mc"
    projectable = False

    def project(self, M):
        raise NotImplementedError("projection onto the metric cone is not provided")

    def contains(self, M, tol=1e-8):
        M = np.asarray(M, dtype=float)
        if not Sh().contains(M, tol):
            return False
        # axes (i, j, k): M_ij - M_ik - M_kj
        viol = M[:, :, None] - M[:, None, :] - M.T[None, :, :]
        return bool(viol.max() <= tol)


class Affine(ConstraintSet):
    """Costs of the form ``-U0^T A V0`` for ``A`` of size ``d x d``.

    The projection is ``(U0^+ U0)^T M (V0^+ V0)`` with the two projectors
    precomputed from SVD pseudoinverses.
    """

    kind = "affine"

    def __init__(self, U0, V0, rcond=1e-12):
        self.U0 = np.array(U0, dtype=float)
        self.V0 = np.array(V0, dtype=float)
        if self.U0.ndim != 2 or self.U0.shape != self.V0.shape:
            raise ValueError("U0 and V0 must be d x n matrices of equal shape")
        self.PU = np.linalg.pinv(self.U0, rcond=rcond) @ self.U0
        self.PV = np.linalg.pinv(self.V0, rcond=rcond) @ self.V0
        self.PU.flags.writeable = False
        self.PV.flags.writeable = False

    def project(self, M):
        return self.PU.T @ np.asarray(M, dtype=float) @ self.PV

    def contains(self, M, tol=1e-8):
        M = np.asarray(M, dtype=float)
        return bool(np.max(np.abs(self.project(M) - M)) <= tol)

    def affinity(self, C) -> np.ndarray:
        """Least-squares ``A`` with ``C = -U0^T A V0``."""
        return -np.linalg.pinv(self.U0.T) @ np.asarray(C, dtype=float) @ np.linalg.pinv(self.V0)


def get_set(spec, loader=None) -> ConstraintSet:
    """Parse ``sh | shw:<w1,w2,...> | ed | mc | affine:<U0.csv>,<V0.csv> |
    nonneg | free``.  ``loader`` reads a matrix from a path (affine only)."""
    if isinstance(spec, ConstraintSet):
        return spec
    key, _, arg = str(spec).strip().partition(":")
    key = key.lower()
    if key == "sh":
        return Sh()
    if key == "shw":
        return Shw([float(x) for x in arg.split(",") if x.strip()])
    if key == "ed":
        return ED()
    if key == "mc":
        return MetricCone()
    if key in ("nonneg", "nonnegative"):
        return Nonnegative()
    if key in ("free", "whole", "whole_space"):
        return WholeSpace()
    if key == "affine":
        if loader is None:
            from .io import read_matrix as loader
        u_path, _, v_path = arg.partition(",")
        return Affine(loader(u_path), loader(v_path))
    raise ValueError(f"unknown constraint set {spec!r}")


def project(cset, M) -> np.ndarray:
    return get_set(cset).project(M)


def contains(cset, M, tol=1e-8) -> bool:
    return get_set(cset).contains(M, tol)
