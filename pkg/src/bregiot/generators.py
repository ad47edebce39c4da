"""Separable Bregman generators, their conjugates, and the induced divergences.

A generator is a scalar convex function ``phi`` of Legendre type applied
entrywise to a transport plan.  Every generator exposes

* ``phi``, ``phi_prime`` on ``dom phi``,
* the Fenchel conjugate ``psi`` with ``psi_prime`` and ``psi_second``
  (for entropy ``psi = exp - 1``, matching ``phi(0) = 1``),
* the limiting slopes ``phi0_prime`` and ``phi1_prime`` at ``0+`` and ``1-``.

Infinite limits are stored as IEEE infinities.  All methods are vectorised
over numpy arrays and return plain floats for scalar input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import DimensionError, DomainError

__all__ = [
    "Interval",
    "BregmanGenerator",
    "Entropy",
    "Burg",
    "FermiDirac",
    "BetaPotential",
    "Quadratic",
    "get_generator",
    "generator_eval",
    "bregman_divergence",
    "limiting_derivatives",
    "target_set_contains",
    "DOMAIN_EPS",
]

# Distance to a finite boundary of dom psi below which evaluation is refused.
DOMAIN_EPS = 1e-12

BETA_RANGE = (0.05, 0.95)


class Interval(NamedTuple):
    lo: float
    hi: float
    lo_closed: bool = False
    hi_closed: bool = False

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        lo_ok = x >= self.lo if self.lo_closed else x > self.lo
        hi_ok = x <= self.hi if self.hi_closed else x < self.hi
        return lo_ok & hi_ok

    def interior_contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        lo = self.lo + margin if np.isfinite(self.lo) else self.lo
        hi = self.hi - margin if np.isfinite(self.hi) else self.hi
        return (x > lo) & (x < hi)


def _out(values, scalar):
    return float(values) if scalar else values


def _first_bad(mask):
    bad = np.argwhere(~mask)
    if bad.size == 0:
        return None
    return tuple(int(i) for i in bad[0])


@dataclass(frozen=True)
class BregmanGenerator:
    """Base class.  Subclasses implement the private ``_phi`` ... ``_psi2``."""

    name = "abstract"
    dom_phi = Interval(-math.inf, math.inf)
    dom_psi = Interval(-math.inf, math.inf)
    phi0_prime = 0.0
    phi1_prime = 0.0

    # -- identification -------------------------------------------------
    @property
    def id(self) -> str:
        return self.name

    def __str__(self):
        return self.id

    # -- checked public evaluation ---------------------------------------
    def _check(self, x, ok, what):
        x_arr = np.asarray(x, dtype=float)
        mask = ok(x_arr)
        if not np.all(mask):
            idx = _first_bad(np.broadcast_to(mask, x_arr.shape))
            val = x_arr[idx] if idx is not None and x_arr.ndim else x_arr
            raise DomainError(
                f"{self.id}: {what} undefined at {float(val)!r}", index=idx
            )
        return x_arr, x_arr.ndim == 0

    def phi(self, x):
        x, s = self._check(x, self.dom_phi.contains, "phi")
        return _out(self._phi(x), s)

    def phi_prime(self, x):
        x, s = self._check(x, self.dom_phi.interior_contains, "phi'")
        return _out(self._phi1(x), s)

    def _psi_ok(self, t):
        return self.dom_psi.interior_contains(t, DOMAIN_EPS)

    def psi(self, theta):
        t, s = self._check(theta, self._psi_ok, "psi")
        return _out(self._psi(t), s)

    def psi_prime(self, theta):
        t, s = self._check(theta, self._psi_ok, "psi'")
        return _out(self._psi1(t), s)

    def psi_second(self, theta):
        t, s = self._check(theta, self._psi_ok, "psi''")
        return _out(self._psi2(t), s)

    def in_psi_domain(self, theta):
        """Boolean mask of arguments at which ``psi`` may be evaluated."""
        return self._psi_ok(np.asarray(theta, dtype=float))

    @property
    def psi_upper(self) -> float:
        """Supremum of dom psi (``inf`` when unbounded above)."""
        return self.dom_psi.hi

    def divergence(self, x, y):
        """Entrywise ``B(x || y) = phi(x) - phi(y) - (x - y) phi'(y)``."""
        x, _ = self._check(x, self.dom_phi.contains, "B(x||.)")
        y, _ = self._check(y, self.dom_phi.interior_contains, "B(.||y)")
        return self._div(x, y)

    def _div(self, x, y):
        return self._phi(x) - self._phi(y) - (x - y) * self._phi1(y)


@dataclass(frozen=True)
class Entropy(BregmanGenerator):
    """Boltzmann-Shannon entropy ``x log x - x + 1`` (KL divergence)."""

    name = "entropy"
    dom_phi = Interval(0.0, math.inf, lo_closed=True)
    phi0_prime = -math.inf
    phi1_prime = 0.0

    def _phi(self, x):
        return special.xlogy(x, x) - x + 1.0

    def _phi1(self, x):
        return np.log(x)

    def _psi(self, t):
        return np.expm1(t)

    def _psi1(self, t):
        return np.exp(t)

    _psi2 = _psi1

    def _div(self, x, y):
        return special.kl_div(x, y)


@dataclass(frozen=True)
class Burg(BregmanGenerator):
    """Burg entropy ``x - log x - 1`` (Itakura-Saito divergence)."""

    name = "burg"
    dom_phi = Interval(0.0, math.inf)
    dom_psi = Interval(-math.inf, 1.0)
    phi0_prime = -math.inf
    phi1_prime = 0.0

    def _phi(self, x):
        return x - np.log(x) - 1.0

    def _phi1(self, x):
        return 1.0 - 1.0 / x

    def _psi(self, t):
        return -np.log1p(-t)

    def _psi1(self, t):
        return 1.0 / (1.0 - t)

    def _psi2(self, t):
        return 1.0 / (1.0 - t) ** 2

    def _div(self, x, y):
        r = x / y
        return r - np.log(r) - 1.0


@dataclass(frozen=True)
class FermiDirac(BregmanGenerator):
    """Fermi-Dirac entropy ``x log x + (1-x) log(1-x)`` (logistic loss)."""

    name = "fermi-dirac"
    dom_phi = Interval(0.0, 1.0, lo_closed=True, hi_closed=True)
    phi0_prime = -math.inf
    phi1_prime = math.inf

    def _phi(self, x):
        return special.xlogy(x, x) + special.xlogy(1.0 - x, 1.0 - x)

    def _phi1(self, x):
        return special.logit(x)

    def _psi(self, t):
        return np.logaddexp(0.0, t)

    def _psi1(self, t):
        return special.expit(t)

    def _psi2(self, t):
        return special.expit(t) * special.expit(-t)

    def _div(self, x, y):
        return special.rel_entr(x, y) + special.rel_entr(1.0 - x, 1.0 - y)


@dataclass(frozen=True)
class BetaPotential(BregmanGenerator):
    """beta-potential ``(x^b - b x + b - 1) / (b (b - 1))`` for ``0 < b < 1``."""

    beta: float = 0.5
    name = "beta"
    dom_phi = Interval(0.0, math.inf, lo_closed=True)
    phi0_prime = -math.inf
    phi1_prime = 0.0

    def __post_init__(self):
        lo, hi = BETA_RANGE
        if not lo <= self.beta <= hi:
            raise ValueError(f"beta must lie in [{lo}, {hi}], got {self.beta}")

    @property
    def id(self) -> str:
        return f"beta:{self.beta:g}"

    @property
    def dom_psi(self):
        return Interval(-math.inf, 1.0 / (1.0 - self.beta))

    def _t(self, t):
        return 1.0 + (self.beta - 1.0) * t

    def _phi(self, x):
        b = self.beta
        return (x**b - b * x + b - 1.0) / (b * (b - 1.0))

    def _phi1(self, x):
        b = self.beta
        return (x ** (b - 1.0) - 1.0) / (b - 1.0)

    def _psi(self, t):
        b = self.beta
        return (self._t(t) ** (b / (b - 1.0)) - 1.0) / b

    def _psi1(self, t):
        return self._t(t) ** (1.0 / (self.beta - 1.0))

    def _psi2(self, t):
        return self._t(t) ** (1.0 / (self.beta - 1.0) - 1.0)


@dataclass(frozen=True)
class Quadratic(BregmanGenerator):
    """``x^2 / 2``; finite slope at zero, so plans may have zero entries."""

    name = "quadratic"
    phi0_prime = 0.0
    phi1_prime = 1.0

    def _phi(self, x):
        return 0.5 * x * x

    def _phi1(self, x):
        return np.asarray(x, dtype=float) * 1.0

    def _psi(self, t):
        return 0.5 * t * t

    def _psi1(self, t):
        return np.asarray(t, dtype=float) * 1.0

    def _psi2(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def _div(self, x, y):
        return 0.5 * (x - y) ** 2


_ALIASES = {
    "entropy": Entropy,
    "boltzmann_shannon": Entropy,
    "kl": Entropy,
    "burg": Burg,
    "fermi-dirac": FermiDirac,
    "fermi_dirac": FermiDirac,
    "quadratic": Quadratic,
}


def get_generator(spec) -> BregmanGenerator:
    """Resolve ``'entropy' | 'burg' | 'fermi-dirac' | 'beta:<b>' | 'quadratic'``."""
    if isinstance(spec, BregmanGenerator):
        return spec
    key = str(spec).strip().lower()
    if key.startswith("beta"):
        _, _, b = key.partition(":")
        return BetaPotential(float(b) if b else 0.5)
    try:
        return _ALIASES[key]()
    except KeyError:
        raise ValueError(f"unknown generator {spec!r}") from None


def generator_eval(gen, func: str, x):
    """Evaluate ``phi | phi_prime | psi | psi_prime | psi_second`` at ``x``."""
    gen = get_generator(gen)
    funcs = {
        "phi": gen.phi,
        "phi_prime": gen.phi_prime,
        "psi": gen.psi,
        "psi_prime": gen.psi_prime,
        "psi_second": gen.psi_second,
    }
    if func not in funcs:
        raise ValueError(f"unknown function {func!r}")
    return funcs[func](x)


def bregman_divergence(gen, X, Y) -> float:
    """Sum of entrywise divergences ``B(X_ij || Y_ij)``."""
    gen = get_generator(gen)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise DimensionError(f"shape mismatch {X.shape} vs {Y.shape}")
    return float(np.sum(gen.divergence(X, Y)))


def limiting_derivatives(gen) -> tuple[float, float]:
    gen = get_generator(gen)
    return gen.phi0_prime, gen.phi1_prime


def target_set_contains(gen, X, mu, nu, tol=1e-10) -> bool:
    """Membership of ``X`` in the range of the forward map over costs ``C >= 0``.

    ``X`` must be a transport plan between ``mu`` and ``nu`` (within ``tol``);
    entries must avoid 0 when ``phi'(0+) = -inf`` and avoid 1 when
    ``phi'(1-) = +inf``.
    """
    gen = get_generator(gen)
    X = np.asarray(X, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if X.ndim != 2 or X.shape != (mu.size, nu.size):
        raise DimensionError(
            f"plan shape {X.shape} incompatible with marginals "
            f"({mu.size}, {nu.size})"
        )
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if np.any(X < -tol):
        return False
    if np.max(np.abs(X.sum(axis=1) - mu)) > tol:
        return False
    if np.max(np.abs(X.sum(axis=0) - nu)) > tol:
        return False
    if gen.phi0_prime == -math.inf and np.any(X <= 0.0):
        return False
    if gen.phi1_prime == math.inf:
        if np.any(X >= 1.0):
            return False
    elif np.any(X > 1.0 + tol):
        return False
    return True
