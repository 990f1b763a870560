"""Slicing sequences, iterated lower bounds and explicit blow-up deadlines.

The damped Klein-Gordon case uses a two-step slicing (``ell_0 = 1/k2``,
``ell_k = 1 + (pq)^{-k/2}``) and a single lower-bound sequence for the
space average of ``v``; the massless case uses a one-step slicing
(``ell_0 = 1/b``, ``ell_k = 1 + (pq)^{-k}``) and coupled sequences for both
averages. Coefficients ``D_j``, ``H_j``, ``K_j`` scale like
``eps ** (pq)^j`` and are stored as logarithms throughout.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import numpy as np

from .model import CharRoots, Number, SystemParams, as_exact, char_roots

DEFAULT_JMAX = 40
M1_SCAN = 64


class SlicingScheme(enum.Enum):
    TWO_STEP = "two_step"
    ONE_STEP = "one_step"


class ThresholdWarning(UserWarning):
    """Raised when ``eps`` exceeds the certified threshold ``eps0``."""


@dataclass(frozen=True)
class SlicingData:
    scheme: SlicingScheme
    ell: np.ndarray
    L: np.ndarray
    L_limit: float
    truncation_index: int
    truncation_error: float

    def to_dict(self, head: int = 8) -> dict:
        return {
            "scheme": self.scheme.value,
            "ell_head": [float(x) for x in self.ell[:head]],
            "L_head": [float(x) for x in self.L[:head]],
            "K": len(self.ell) - 1,
            "L_limit": self.L_limit,
            "truncation_index": self.truncation_index,
            "truncation_error": self.truncation_error,
        }


def _ell_tail(pq: float, scheme: SlicingScheme, k):
    k = np.asarray(k, dtype=float)
    power = k / 2 if scheme is SlicingScheme.TWO_STEP else k
    return pq ** (-power)


def build_slicing(
    scheme: SlicingScheme,
    params: SystemParams,
    roots: Optional[CharRoots] = None,
    K: int = 2 * M1_SCAN + 2,
) -> SlicingData:
    if K < 0:
        raise ValueError("K must be non-negative")
    pq = float(params.pq)
    if scheme is SlicingScheme.TWO_STEP:
        roots = roots or char_roots(params)
        if roots.k2 <= 0:
            raise ValueError("two-step slicing needs k2 > 0 (m2 > 0); use the one-step scheme")
        ell0 = 1.0 / roots.k2
    else:
        ell0 = 1.0 / float(params.b)
    inc = _ell_tail(pq, scheme, np.arange(1, K + 1))
    ell = np.concatenate([[ell0], 1.0 + inc])
    L = np.cumprod(ell)

    # infinite product: extend the log-sum until the increment drops below 1e-15
    logs = [math.log(ell0)]
    k = 1
    while True:
        term = math.log1p(float(_ell_tail(pq, scheme, k)))
        logs.append(term)
        if term < 1e-15:
            break
        k += 1
    ratio = float(_ell_tail(pq, scheme, 1))
    tail = logs[-1] * ratio / (1 - ratio)
    L_limit = math.exp(math.fsum(logs))
    return SlicingData(scheme, ell, L, L_limit, k, L_limit * tail)


# --- damped Klein-Gordon sequences ------------------------------------------


def kg_alpha(j: int, r: int, pq: Number):
    """Exponent ``alpha_j``; returns ``(value, |recursion - closed form|)``."""
    if j < 0:
        raise ValueError("j must be non-negative")
    pq = as_exact(pq)
    alpha = Fraction(r) if isinstance(pq, Fraction) else float(r)
    for _ in range(j):
        alpha = alpha * pq + 2
    closed = (2 / (pq - 1) + r) * pq**j - 2 / (pq - 1)
    return alpha, abs(alpha - closed)


@dataclass(frozen=True)
class KGLowerBoundSeq:
    """``V(t) >= D_j (t - L_{2j})^{alpha_j}`` for ``t >= L_{2j}``."""

    alpha: List[Number]
    log_D: np.ndarray
    C_r: float
    r: int
    epsilon: float

    @property
    def jmax(self) -> int:
        return len(self.alpha) - 1


def kg_sequences(
    params: SystemParams, C_r: float, r: int, slicing: SlicingData, J: int = DEFAULT_JMAX
) -> KGLowerBoundSeq:
    if not C_r > 0:
        raise ValueError("C_r must be positive (non-trivial, non-negative v data)")
    if len(slicing.ell) < 2 * J + 1:
        raise ValueError(f"slicing too short for J={J}: need K >= {2 * J}")
    p, q = float(params.p), float(params.q)
    pq = p * q
    k1k2 = float(params.m2)
    alphas = [kg_alpha(j, r, params.pq)[0] for j in range(J + 1)]
    with np.errstate(divide="ignore"):
        log_D = np.empty(J + 1)
        log_D[0] = np.log(C_r * params.epsilon)
    ell = slicing.ell
    for j in range(J):
        a = float(alphas[j])
        log_D[j + 1] = (
            2 * q * math.log(pq - 0.5)
            - q * math.log(k1k2)
            - a * pq * (math.log(ell[2 * j + 1]) + math.log(ell[2 * j + 2]))
            - math.log(a * pq + 1)
            - math.log(a * pq + 2)
            - (4 * j + 3) * q * math.log(pq)
            + pq * log_D[j]
        )
    return KGLowerBoundSeq(alphas, log_D, C_r, r, params.epsilon)


def kg_D(j: int, seq: KGLowerBoundSeq) -> float:
    """``ln D_j``."""
    return float(seq.log_D[j])


@dataclass(frozen=True)
class KGThresholds:
    M0: float
    M1: float
    M1_limit: float
    M1_argmax: int
    M2: float
    M3: float
    j0: int
    eps0: float
    L: float
    pq: float
    r: int

    @property
    def deadline_exponent(self) -> float:
        return (self.pq - 1) / (self.r * self.pq + 2 - self.r)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def kg_thresholds(
    params: SystemParams,
    roots: CharRoots,
    slicing: SlicingData,
    C_r: float,
    r: int,
) -> KGThresholds:
    if not C_r > 0:
        raise ValueError("C_r must be positive")
    p, q = float(params.p), float(params.q)
    pq = p * q
    A = 2 / (pq - 1) + r
    M0 = A**2
    M1_limit = math.exp(A * (1 + math.sqrt(pq)))
    ell = slicing.ell
    jscan = min(M1_SCAN, (len(ell) - 3) // 2)
    best, argmax = -math.inf, -1
    for j in range(jscan + 1):
        a_next = float(kg_alpha(j + 1, r, pq)[0])
        val = a_next * (math.log(ell[2 * j + 1]) + math.log(ell[2 * j + 2]))
        if val > best:
            best, argmax = val, j
    M1 = max(M1_limit, math.exp(best))
    M2 = (pq - 0.5) ** (2 * q) * pq**q / ((roots.k1 * roots.k2) ** q * M0 * M1)
    M3 = C_r * 2 ** (-A) * pq ** (-(4 * q + 2) * pq / (pq - 1) ** 2) * M2 ** (1 / (pq - 1))
    j0 = max(0, math.ceil(math.log(M2) / ((4 * q + 2) * math.log(pq)) - pq / (pq - 1)))
    L = slicing.L_limit
    eps0 = (2 * L) ** (-A) / M3
    return KGThresholds(M0, M1, M1_limit, argmax, M2, M3, j0, eps0, L, pq, r)


def kg_upper_T(eps: float, thresholds: KGThresholds, slicing: Optional[SlicingData] = None) -> float:
    """Explicit blow-up deadline ``max{2L, (M3 eps)^{-(pq-1)/(r pq + 2 - r)}}``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps > thresholds.eps0:
        warnings.warn(
            f"eps={eps:g} exceeds eps0={thresholds.eps0:g}; deadline is not certified",
            ThresholdWarning,
            stacklevel=2,
        )
    L = slicing.L_limit if slicing is not None else thresholds.L
    return max(2 * L, (thresholds.M3 * eps) ** (-thresholds.deadline_exponent))


# --- massless sequences -------------------------------------------------------


@dataclass(frozen=True)
class MasslessLowerBoundSeq:
    """``U(t) >= H_j (t-L_j)^{a_j}`` and ``V(t) >= K_j (t-L_j)^{b_j}``."""

    a: List[Number]
    b_seq: List[Number]
    log_H: np.ndarray
    log_K: np.ndarray
    C2: float
    C_r: float
    r: int
    epsilon: float
    H_const: float
    K_const: float
    M4: float
    M5: float
    M6: float
    j1: Optional[int]
    j2: int
    eps0: float
    L: float
    pq: float
    p: float
    q: float

    @property
    def jmax(self) -> int:
        return len(self.a) - 1

    def term(self, j: int):
        return self.a[j], self.b_seq[j], float(self.log_H[j]), float(self.log_K[j])

    @property
    def u_exponent(self) -> float:
        return (self.pq - 1) / (2 * self.p + 1)

    @property
    def v_exponent(self) -> float:
        return (self.pq - 1) / (self.r * self.pq + 2 - self.r + self.q)

    def audit(self) -> dict:
        keys = ["C2", "C_r", "r", "H_const", "K_const", "M4", "M5", "M6", "j1", "j2", "eps0", "L"]
        out = {k: getattr(self, k) for k in keys}
        out["a_head"] = [float(x) for x in self.a[:6]]
        out["b_head"] = [float(x) for x in self.b_seq[:6]]
        return out


def massless_closed_forms(j: int, r: int, p: Number, q: Number):
    """Closed forms of ``a_j`` and ``b_j``."""
    p, q = as_exact(p), as_exact(q)
    pq = p * q
    a = (0 + (2 * p + 1) / (pq - 1)) * pq**j - (2 * p + 1) / (pq - 1)
    b = (r + (q + 2) / (pq - 1)) * pq**j - (q + 2) / (pq - 1)
    return a, b


def massless_sequences(
    params: SystemParams,
    C2: float,
    C_r: float,
    r: int,
    J: int = DEFAULT_JMAX,
    slicing: Optional[SlicingData] = None,
) -> MasslessLowerBoundSeq:
    """Iterated massless lower bounds and their explicit constants.

    ``C2 == 0`` (trivial ``u`` data) is accepted: the ``U`` chain is then
    identically zero and only the ``V`` chain yields a deadline.
    """
    if params.m2 != 0:
        raise ValueError("massless sequences require m2 = 0")
    if C2 < 0:
        raise ValueError("C2 must be non-negative")
    if not C_r > 0:
        raise ValueError("C_r must be positive")
    slicing = slicing or build_slicing(SlicingScheme.ONE_STEP, params, K=max(J + 1, M1_SCAN + 1))
    pe, qe = as_exact(params.p), as_exact(params.q)
    pqe = pe * qe
    p, q, b = float(pe), float(qe), float(params.b)
    pq = p * q
    a_seq: List[Number] = [Fraction(0) if isinstance(pqe, Fraction) else 0.0]
    b_seq: List[Number] = [Fraction(r) if isinstance(pqe, Fraction) else float(r)]
    for _ in range(J):
        a_seq.append(pqe * a_seq[-1] + 2 * pe + 1)
        b_seq.append(pqe * b_seq[-1] + qe + 2)

    ell = slicing.ell
    with np.errstate(divide="ignore"):
        log_H = np.empty(J + 1)
        log_K = np.empty(J + 1)
        log_H[0] = np.log(C2 * params.epsilon)
        log_K[0] = np.log(C_r * params.epsilon)
    for j in range(J):
        a1, b1 = float(a_seq[j + 1]), float(b_seq[j + 1])
        lg = math.log(ell[j + 1])
        log_H[j + 1] = (
            math.log(pq - 0.5) - a1 * lg - math.log(b) - (2 * p + 1) * math.log(a1)
            - 2 * (j + 1) * math.log(pq) + pq * log_H[j]
        )
        log_K[j + 1] = (
            q * math.log(pq - 0.5) - b1 * lg - q * math.log(b) - (q + 2) * math.log(b1)
            - 2 * q * (j + 1) * math.log(pq) + pq * log_K[j]
        )

    A_u = (2 * p + 1) / (pq - 1)
    A_v = r + (q + 2) / (pq - 1)
    # M4 must bound ell_j^{-a_j}, ell_j^{-b_j} from below (j >= 1) for H, K to be lower bounds
    scan = min(M1_SCAN, len(ell) - 1)
    worst = max(A_u, A_v)
    for j in range(1, scan + 1):
        aj, bj = massless_closed_forms(j, r, pe, qe)
        worst = max(worst, float(aj) * math.log(ell[j]), float(bj) * math.log(ell[j]))
    M4 = math.exp(-worst)
    H_const = M4 / b * (pq - 0.5) * A_u ** (-(2 * p + 1))
    K_const = M4 / b**q * (pq - 0.5) ** q * A_v ** (-(q + 2))
    j2 = max(0, math.ceil(math.log(K_const) / ((3 * q + 2) * math.log(pq)) - pq / (pq - 1)))
    M6 = C_r * pq ** (-(3 * q + 2) * pq / (pq - 1) ** 2) * 2 ** (-A_v) * K_const ** (1 / (pq - 1))
    L = slicing.L_limit
    eps0_v = (2 * L) ** (-A_v) / M6
    if C2 > 0:
        j1 = max(0, math.ceil(math.log(H_const) / ((2 * p + 3) * math.log(pq)) - pq / (pq - 1)))
        M5 = C2 * pq ** (-(2 * p + 3) * pq / (pq - 1) ** 2) * 2 ** (-A_u) * H_const ** (1 / (pq - 1))
        eps0 = min((2 * L) ** (-A_u) / M5, eps0_v)
    else:
        j1, M5, eps0 = None, 0.0, eps0_v
    return MasslessLowerBoundSeq(
        a_seq, b_seq, log_H, log_K, C2, C_r, r, params.epsilon,
        H_const, K_const, M4, M5, M6, j1, j2, eps0, L, pq, p, q,
    )


def massless_upper_T(eps: float, seq: MasslessLowerBoundSeq) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps > seq.eps0:
        warnings.warn(
            f"eps={eps:g} exceeds eps0={seq.eps0:g}; deadline is not certified",
            ThresholdWarning,
            stacklevel=2,
        )
    t_v = (seq.M6 * eps) ** (-seq.v_exponent)
    t_u = (seq.M5 * eps) ** (-seq.u_exponent) if seq.M5 > 0 else math.inf
    return max(2 * seq.L, min(t_u, t_v))


# --- envelopes ----------------------------------------------------------------


def _log_terms(t: float, seq, slicing: SlicingData, jmax: int):
    """Log of every admissible lower-bound term for ``V`` at time ``t``."""
    if isinstance(seq, KGLowerBoundSeq):
        starts = [slicing.L[2 * j] for j in range(jmax + 1)]
        expo, logc = seq.alpha, seq.log_D
    else:
        starts = [slicing.L[j] for j in range(jmax + 1)]
        expo, logc = seq.b_seq, seq.log_K
    out = []
    for j in range(jmax + 1):
        if t < starts[j] or not np.isfinite(logc[j]):
            continue
        gap = t - starts[j]
        a = float(expo[j])
        if gap == 0:
            if a == 0:
                out.append((j, logc[j]))
            continue
        out.append((j, logc[j] + a * math.log(gap)))
    return out


def envelope_V(t: float, seq, slicing: SlicingData, Jmax: int = DEFAULT_JMAX) -> float:
    """Certified lower bound for the space average of ``v`` at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    jmax = min(Jmax, seq.jmax)
    if isinstance(seq, KGLowerBoundSeq):
        jmax = min(jmax, (len(slicing.L) - 1) // 2)
    else:
        jmax = min(jmax, len(slicing.L) - 1)
    first = seq.C_r * seq.epsilon * t**seq.r
    logs = [lv for _, lv in _log_terms(t, seq, slicing, jmax)]
    if not logs:
        return first
    top = max(logs)
    if top > 709:
        return math.inf
    return max(first, math.exp(top))


def log_lower_bound_terms(t: float, seq, slicing: SlicingData, Jmax: int = DEFAULT_JMAX):
    """``[(j, ln term_j)]`` for all ``j <= Jmax`` with ``t`` past the slicing point."""
    jmax = min(Jmax, seq.jmax)
    return _log_terms(t, seq, slicing, jmax)
