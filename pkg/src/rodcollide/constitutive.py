"""Singular rod stress law, elastic floor law and their truncations.

Every law exposes the same three evaluations, vectorised over numpy arrays:

``value``
    the stress (rod) or floor reaction force
``derivative``
    its derivative, used for Newton Jacobians
``potential``
    the primitive normalised to zero at the natural state

The closed forms below are written in factored form so that no evaluation
suffers catastrophic cancellation near the natural state.  With ``s = 1 + eps``
and ``p = h + beta``::

    f(eps)      = kappa * eps * (2 s^3 + s^2 + s + 1) / (4 s^3)
    f_hat(eps)  = kappa * eps^2 * (2 s^2 + 2 s + 1) / (8 s^2)
    sb(h)       = -kappa_b * h * (beta^2 + beta p + p^2) / p^3        (h < 0)
    sb_hat(h)   = -kappa_b * h^2 * (3 beta + 2 h) / (2 p^2)          (h < 0)

Evaluating at or past a singularity raises :class:`DomainError`; values are
never clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BadConfig, DomainError

__all__ = [
    "StressLaw",
    "FloorLaw",
    "TruncatedLaw",
    "stress",
    "stress_prime",
    "stress_potential",
    "floor_stress",
    "floor_stiffness",
    "floor_potential",
    "truncate",
    "coercivity_constants",
    "floor_delta",
]


def _out(x, scalar):
    return float(x) if scalar else x


@dataclass(frozen=True)
class StressLaw:
    """Rod stress ``f(eps) = kappa/2 (eps + 1/2 - 1/(2 (1+eps)^3))``."""

    kappa: float = 1.0

    lower = -1.0

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise BadConfig(f"kappa must be positive and finite, got {self.kappa}")

    def _arg(self, eps):
        e = np.asarray(eps, dtype=float)
        if np.any(~(e > -1.0)):
            raise DomainError(
                f"strain at or below the compression singularity -1 (min {np.min(e)!r})"
            )
        return e

    def value(self, eps):
        e = self._arg(eps)
        s = 1.0 + e
        s3 = s * s * s
        return _out(self.kappa * e * (2.0 * s3 + s * s + s + 1.0) / (4.0 * s3), e.ndim == 0)

    def derivative(self, eps):
        e = self._arg(eps)
        s2 = (1.0 + e) ** 2
        return _out(0.5 * self.kappa * (1.0 + 1.5 / (s2 * s2)), e.ndim == 0)

    def potential(self, eps):
        e = self._arg(eps)
        s = 1.0 + e
        s2 = s * s
        return _out(self.kappa * e * e * (2.0 * s2 + 2.0 * s + 1.0) / (8.0 * s2), e.ndim == 0)

    def coercivity(self):
        # f_hat - (-kappa/4 + kappa/(8 s^2)) = kappa (2 eps^2 + 2 eps + 1) / 8 >= kappa/16
        return 0.25 * self.kappa, 0.125 * self.kappa


@dataclass(frozen=True)
class FloorLaw:
    """Elastic floor reaction with bending limit ``beta``.

    ``sigma_b(h) = kappa_b (beta^3/(h+beta)^3 - 1)`` below the floor surface
    and zero on or above it.
    """

    kappa_b: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if not (self.kappa_b > 0 and math.isfinite(self.kappa_b)):
            raise BadConfig(f"kappa_b must be positive and finite, got {self.kappa_b}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise BadConfig(f"beta must be positive and finite, got {self.beta}")

    @property
    def lower(self):
        return -self.beta

    def _arg(self, h):
        x = np.asarray(h, dtype=float)
        if np.any(~(x > -self.beta)):
            raise DomainError(
                f"height at or below the floor bending limit -{self.beta} (min {np.min(x)!r})"
            )
        return x, np.minimum(x, 0.0)

    def value(self, h):
        x, hm = self._arg(h)
        b = self.beta
        p = hm + b
        val = -self.kappa_b * hm * (b * b + b * p + p * p) / (p * p * p)
        return _out(np.where(x < 0.0, val, 0.0), x.ndim == 0)

    def derivative(self, h):
        x, hm = self._arg(h)
        p = hm + self.beta
        val = -3.0 * self.kappa_b * self.beta**3 / (p * p) ** 2
        return _out(np.where(x < 0.0, val, 0.0), x.ndim == 0)

    def potential(self, h):
        x, hm = self._arg(h)
        b = self.beta
        p = hm + b
        val = -self.kappa_b * hm * hm * (3.0 * b + 2.0 * hm) / (2.0 * p * p)
        return _out(np.where(x < 0.0, val, 0.0), x.ndim == 0)

    def delta(self, bound):
        """Distance ``delta`` above ``-beta`` at which ``-potential`` equals ``bound``.

        Any height with ``-potential(h) <= bound`` satisfies
        ``h >= -beta + delta``.  With ``p = h + beta`` the level set is the
        cubic ``2 p^3 - (3 beta + 2 bound/kappa_b) p^2 + beta^3 = 0``; the
        wanted root is the unique one in ``(0, beta)``, taken from the
        trigonometric form of Cardano's formula.
        """
        if not bound > 0:
            raise ValueError(f"bound must be positive, got {bound}")
        b = self.beta
        a = 0.5 * (3.0 * b + 2.0 * bound / self.kappa_b)
        # p^3 - a p^2 + b^3/2 = 0, p = y + a/3
        P = -a * a / 3.0
        Q = -2.0 * a**3 / 27.0 + 0.5 * b**3
        r = 2.0 * math.sqrt(-P / 3.0)
        arg = 3.0 * Q / (P * r)
        theta = math.acos(max(-1.0, min(1.0, arg)))
        roots = [a / 3.0 + r * math.cos((theta - 2.0 * math.pi * k) / 3.0) for k in range(3)]
        inside = [p for p in roots if 0.0 < p < b]
        if not inside:
            raise ArithmeticError("no root of the floor-energy level set in (0, beta)")
        p = min(inside)
        # the small root loses digits to cancellation for large bounds
        for _ in range(3):
            p -= (2.0 * p**3 - 2.0 * a * p * p + b**3) / (6.0 * p * p - 4.0 * a * p)
        return p


@dataclass(frozen=True)
class TruncatedLaw:
    """A base law frozen at ``base(level)`` for arguments ``>= level``."""

    base: Union[StressLaw, FloorLaw]
    level: float

    def __post_init__(self):
        if not (self.level > 0):
            raise BadConfig(f"truncation level must be positive, got {self.level}")
        if isinstance(self.base, TruncatedLaw):
            raise BadConfig("nest truncations through truncate(), not directly")

    @property
    def lower(self):
        return self.base.lower

    def value(self, x):
        return self.base.value(np.minimum(x, self.level))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        d = self.base.derivative(np.minimum(x, self.level))
        return _out(np.where(x < self.level, d, 0.0), x.ndim == 0)

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        pot = self.base.potential(np.minimum(x, self.level))
        extra = self.base.value(self.level) * np.maximum(x - self.level, 0.0)
        return _out(pot + extra, x.ndim == 0)

    def coercivity(self):
        # value(level) >= 0 for level > 0, so the linear tail stays above the bound
        return self.base.coercivity()

    def delta(self, bound):
        return self.base.delta(bound)


Law = Union[StressLaw, FloorLaw, TruncatedLaw]


def stress(law, eps):
    return law.value(eps)


def stress_prime(law, eps):
    return law.derivative(eps)


def stress_potential(law, eps):
    return law.potential(eps)


def floor_stress(law, h):
    return law.value(h)


def floor_stiffness(law, h):
    return law.derivative(h)


def floor_potential(law, h):
    return law.potential(h)


def truncate(law: Law, level: float) -> TruncatedLaw:
    """Freeze ``law`` above ``level``; truncating twice keeps the lower level."""
    if isinstance(law, TruncatedLaw):
        return TruncatedLaw(law.base, min(law.level, level))
    return TruncatedLaw(law, level)


def coercivity_constants(law) -> tuple[float, float]:
    """Admissible ``(C_f, c_f)`` with ``f_hat(eps) >= -C_f + c_f / (1+eps)^2``."""
    return law.coercivity()


def floor_delta(law, bound: float) -> float:
    return law.delta(bound)
