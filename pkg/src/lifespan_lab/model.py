"""Model parameters, case taxonomy and closed-form scalar formulas.

Everything here is a pure function of immutable values. Exponents are kept
as :class:`fractions.Fraction` whenever ``p`` and ``q`` are representable as
small rationals, so sharpness statements can be checked with ``==``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Union

Number = Union[int, float, Fraction]

DOUBLE_ROOT_RTOL = 1e-12
EXACT_DENOMINATOR_LIMIT = 10**6


class MassCase(enum.Enum):
    DAMPED_KLEIN_GORDON = "damped_klein_gordon"
    MASSLESS = "massless"


class BoundKind(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"


def as_exact(x: Number) -> Number:
    """Return ``x`` as a Fraction when it is a small rational, else as float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    f = Fraction(x).limit_denominator(EXACT_DENOMINATOR_LIMIT)
    if float(f) == float(x):
        return f
    return float(x)


@dataclass(frozen=True)
class SystemParams:
    """Coefficients of the coupled system.

    ``b`` damping, ``m2`` squared mass, ``p`` the power of ``|v|`` feeding
    the damped equation, ``q`` the power of ``|u|`` feeding the wave
    equation, ``epsilon`` the data amplitude.
    """

    b: float
    m2: float
    p: Number
    q: Number
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"damping b must be positive, got {self.b}")
        if self.m2 < 0:
            raise ValueError(f"m2 must be non-negative, got {self.m2}")
        if self.b**2 < 4 * self.m2 * (1 - DOUBLE_ROOT_RTOL):
            raise ValueError(
                f"b^2 >= 4 m2 required (dominant damping); got b={self.b}, m2={self.m2}"
            )
        if not self.p > 1 or not self.q > 1:
            raise ValueError(f"p, q > 1 required, got p={self.p}, q={self.q}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")

    @property
    def mass_case(self) -> MassCase:
        return MassCase.MASSLESS if self.m2 == 0 else MassCase.DAMPED_KLEIN_GORDON

    @property
    def pq(self) -> Number:
        return as_exact(self.p) * as_exact(self.q)

    def with_epsilon(self, epsilon: float) -> "SystemParams":
        return replace(self, epsilon=epsilon)


@dataclass(frozen=True)
class CaseTag:
    mass_case: MassCase
    r: int

    def __post_init__(self):
        if self.r not in (0, 1):
            raise ValueError(f"r must be 0 or 1, got {self.r}")

    @classmethod
    def for_params(cls, params: SystemParams, r: int) -> "CaseTag":
        return cls(params.mass_case, r)


@dataclass(frozen=True)
class CharRoots:
    k1: float
    k2: float
    double_root: bool


def is_double_root(b: float, m2: float) -> bool:
    return abs(b * b - 4 * m2) <= DOUBLE_ROOT_RTOL * max(1.0, b * b)


def char_roots(params: SystemParams) -> CharRoots:
    """Roots of ``k^2 - b k + m2 = 0`` with ``k1 >= k2 >= 0``.

    The smaller root is formed as ``m2 / k1`` to avoid cancellation when
    ``m2`` is small compared with ``b^2``.
    """
    b, m2 = float(params.b), float(params.m2)
    disc = b * b - 4 * m2
    if is_double_root(b, m2):
        return CharRoots(b / 2, b / 2, True)
    if disc < 0:
        raise ValueError("b^2 < 4 m2: oscillatory regime is excluded")
    k1 = 0.5 * (b + math.sqrt(disc))
    k2 = m2 / k1 if m2 > 0 else 0.0
    return CharRoots(k1, k2, False)


@dataclass(frozen=True)
class LifespanExponent:
    """``T(eps)`` scales like ``eps ** (-value)``.

    ``value`` is ``None`` when the estimate does not apply; ``applicability``
    then says why.
    """

    value: Optional[Number]
    bound_kind: BoundKind
    applicability: Optional[str] = None

    @property
    def applicable(self) -> bool:
        return self.value is not None

    def __float__(self):
        if self.value is None:
            raise ValueError(f"exponent not applicable: {self.applicability}")
        return float(self.value)


def upper_lifespan_exponent(case: CaseTag, p: Number, q: Number) -> LifespanExponent:
    p, q = as_exact(p), as_exact(q)
    _check_pq(p, q)
    pq, r = p * q, case.r
    if case.mass_case is MassCase.DAMPED_KLEIN_GORDON:
        value = (pq - 1) / (pq + 1) if r == 1 else (pq - 1) / 2
    else:
        value = (pq - 1) / max(2 * p + 1, r * pq + 2 - r + q)
    return LifespanExponent(value, BoundKind.UPPER)


def lower_lifespan_exponent(case: CaseTag, p: Number, q: Number) -> LifespanExponent:
    p, q = as_exact(p), as_exact(q)
    _check_pq(p, q)
    pq, r = p * q, case.r
    if case.mass_case is MassCase.DAMPED_KLEIN_GORDON:
        if r == 1:
            return LifespanExponent((pq - 1) / (pq + 1), BoundKind.LOWER)
        if p < 2 - 1 / q:
            return LifespanExponent((pq - 1) / 2, BoundKind.LOWER, "requires p < 2 - 1/q: satisfied")
        return LifespanExponent(None, BoundKind.LOWER, "requires p < 2 - 1/q: violated")
    if r == 1:
        value = min((p - 1) / (p + 1), q - 1)
    else:
        value = min(p - 1, (q - 1) / 2)
    return LifespanExponent(value, BoundKind.LOWER)


def _check_pq(p, q):
    if not (p > 1 and q > 1):
        raise ValueError(f"p, q > 1 required, got p={p}, q={q}")


@dataclass(frozen=True)
class LossParameter:
    value: Number
    contraction_margin: Number  # 1 - value * q; positive when the contraction closes

    @property
    def closes(self) -> bool:
        return self.contraction_margin > 0


def loss_parameter(p: Number, q: Number, r: int) -> LossParameter:
    """Weight exponent for the damped component's solution norm."""
    p, q = as_exact(p), as_exact(q)
    pq = p * q
    if r == 1:
        lam = (2 * p - pq - 1) / (pq - 1)
    elif r == 0:
        lam = (2 * p - 2) / (pq - 1)
    else:
        raise ValueError(f"r must be 0 or 1, got {r}")
    return LossParameter(lam, 1 - lam * q)


def decay_factor(b: float, m2: float, t) -> float:
    """L^2 decay rate of the damped Klein-Gordon linear flow (``m2 > 0``)."""
    import numpy as np

    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    if not m2 > 0:
        raise ValueError("decay_factor is the m2 > 0 rate; use massless_decay_rate")
    if b * b < 4 * m2 and not is_double_root(b, m2):
        raise ValueError("b^2 >= 4 m2 required")
    if is_double_root(b, m2):
        out = (1 + t_arr) * np.exp(-0.5 * b * t_arr)
    else:
        k1 = 0.5 * (b + math.sqrt(b * b - 4 * m2))
        out = np.exp(-(m2 / k1) * t_arr)
    return float(out) if out.ndim == 0 else out


LAMBDA_INDEX = ((0, 0), (1, 0), (0, 1))


def massless_decay_rate(t, j: int, k: int):
    """``(1+t)^{-(2j+k)/2}`` for ``(j, k)`` with ``j + k <= 1``."""
    import numpy as np

    if (j, k) not in LAMBDA_INDEX:
        raise ValueError(f"(j, k) = {(j, k)} outside the index set {LAMBDA_INDEX}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    out = (1 + t_arr) ** (-(2 * j + k) / 2)
    return float(out) if out.ndim == 0 else out


def data_weight(t, r: int):
    """Growth weight of the undamped component: ``1 + t`` if ``v1 != 0``."""
    if r not in (0, 1):
        raise ValueError(f"r must be 0 or 1, got {r}")
    if r == 1:
        return 1 + t
    return 1 + 0 * t


def gn_admissible(n: int, gamma: float) -> bool:
    return n >= 3 and 2 <= gamma <= 2 * n / (n - 2)


def gn_theta(n: int, gamma: float) -> float:
    if not gn_admissible(n, gamma):
        raise ValueError(f"gamma={gamma} not in [2, 2n/(n-2)] for n={n} (n >= 3)")
    return n * (0.5 - 1.0 / gamma)


def nakao_rn_blowup(n: int, p: Number, q: Number) -> bool:
    """Blow-up range of the Euclidean problem in ``R^n``."""
    p, q = as_exact(p), as_exact(q)
    _check_pq(p, q)
    if n < 0:
        raise ValueError("n must be non-negative")
    lhs = max(2 + 1 / p, q / 2 + 1) / (p * q - 1)
    return lhs > Fraction(n - 1, 2) if isinstance(lhs, Fraction) else lhs > (n - 1) / 2
