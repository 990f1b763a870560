"""Homogeneous reduction of the coupled system to an ODE pair.

For spatially constant data the Laplacian drops out and Jensen's inequality
is an equality, so the space averages obey exactly::

    U'' + b U' + m2 U = |V|^p,    V'' = |U|^q.

This module integrates that pair up to numerical blow-up and checks the
integral frames and first lower bounds along the computed trajectories.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .model import CharRoots, SystemParams, char_roots

STATUS_BLEW_UP = "blew_up"
STATUS_SURVIVED = "survived"
STATUS_CENSORED = "censored"
STATUS_STEP_COLLAPSE = "step_collapse"
STATUS_BLOWUP_SUSPECT = "blowup_suspect"  # non-finite values before the threshold
NONCONVERGENT_STATUSES = (STATUS_STEP_COLLAPSE, STATUS_BLOWUP_SUSPECT)


@dataclass(frozen=True)
class HomogeneousData:
    """Constant initial data ``(u0, u1, v0, v1)`` before scaling by ``eps``."""

    u0: float = 0.0
    u1: float = 0.0
    v0: float = 0.0
    v1: float = 1.0

    @property
    def r(self) -> int:
        return 1 if self.v1 != 0 else 0

    @property
    def C_r(self) -> float:
        return self.v1 if self.r == 1 else self.v0

    def C2(self, b: float) -> float:
        """Constant of the first lower bound for ``U`` in the massless case."""
        return self.u0 + (1 - math.exp(-1)) * self.u1 / b

    @property
    def nonnegative(self) -> bool:
        return min(self.u0, self.u1, self.v0, self.v1) >= 0

    def as_tuple(self):
        return (self.u0, self.u1, self.v0, self.v1)

    @classmethod
    def parse(cls, text: str) -> "HomogeneousData":
        parts = [float(x) for x in str(text).replace("(", "").replace(")", "").split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected four comma-separated constants, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class FunctionalState:
    t: float
    U: float
    Up: float
    V: float
    Vp: float

    def as_array(self) -> np.ndarray:
        return np.array([self.U, self.Up, self.V, self.Vp])


def reduce_homogeneous(params: SystemParams, data: HomogeneousData) -> FunctionalState:
    if not data.nonnegative:
        warnings.warn("negative data: the blow-up theorems assume non-negative data", stacklevel=2)
    e = params.epsilon
    return FunctionalState(0.0, e * data.u0, e * data.u1, e * data.v0, e * data.v1)


class FunctionalTrajectory:
    """Samples of ``(t, U, U', V, V')`` with an interpolant.

    ``dense`` is the integrator's continuous extension when available;
    otherwise components are interpolated piecewise-linearly.
    """

    columns = ("t", "U", "Up", "V", "Vp")

    def __init__(self, t, y, dense: Optional[Callable] = None, meta: Optional[dict] = None):
        self.t = np.asarray(t, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(len(self.t), 4)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        self.dense = dense
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.t)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def __call__(self, t) -> np.ndarray:
        """Interpolated state(s); shape ``(4,)`` or ``(4, len(t))``."""
        t_arr = np.asarray(t, dtype=float)
        if self.dense is not None:
            return self.dense(t_arr)
        cols = [np.interp(t_arr, self.t, self.y[:, i]) for i in range(4)]
        return np.array(cols)

    def state(self, i: int) -> FunctionalState:
        return FunctionalState(float(self.t[i]), *map(float, self.y[i]))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for ti, row in zip(self.t, self.y):
            w.writerow([repr(float(ti))] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass
class BlowupReport:
    blew_up: bool
    status: str
    T_low: float
    T_high: float
    threshold_used: float
    refinement: List[Tuple[float, float]] = field(default_factory=list)
    T_est: float = math.nan
    steps: int = 0
    engine: str = "ode"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["refinement"] = [list(x) for x in self.refinement]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "BlowupReport":
        d = dict(d)
        d["refinement"] = [tuple(x) for x in d.get("refinement", [])]
        return cls(**d)


@dataclass(frozen=True)
class IntegratorOptions:
    threshold: float = 1e8
    rtols: Tuple[float, ...] = (1e-8, 1e-10, 1e-12)
    atol: float = 1e-30
    method: str = "DOP853"
    step_floor: float = 1e-13
    linear: bool = False  # drop both power terms (checks against the linear closed form)


def _rhs(params: SystemParams, linear: bool = False):
    b, m2, p, q = float(params.b), float(params.m2), float(params.p), float(params.q)
    on = 0.0 if linear else 1.0

    def f(t, y):
        U, Up, V, Vp = y
        return np.array([Up, on * abs(V) ** p - b * Up - m2 * U, Vp, on * abs(U) ** q])

    return f


def _single_run(params, y0, horizon, rtol, opts: IntegratorOptions, dense: bool):
    B = opts.threshold

    def crossing(t, y):
        return abs(y[0]) + abs(y[2]) - B

    crossing.terminal = True
    crossing.direction = 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = solve_ivp(
            _rhs(params, opts.linear), (0.0, horizon), y0, method=opts.method, rtol=rtol,
            atol=opts.atol, events=crossing, dense_output=dense,
        )
    hit = len(sol.t_events[0]) > 0
    if hit:
        status = STATUS_BLEW_UP
    elif sol.status == 0:
        status = STATUS_SURVIVED
    else:
        # integration failed before the threshold: stagnation, not blow-up
        status = STATUS_STEP_COLLAPSE
    t_cross = float(sol.t_events[0][0]) if hit else float(sol.t[-1])
    return sol, status, t_cross


def _extrapolate(levels: Sequence[float]) -> float:
    """Aitken extrapolation over geometric tolerance refinement."""
    if len(levels) < 3:
        return levels[-1]
    t1, t2, t3 = levels[-3:]
    d1, d2 = t2 - t1, t3 - t2
    if d1 == 0 or d2 == 0 or abs(d2) >= abs(d1) or d1 * d2 < 0:
        return t3
    return t3 - d2 * d2 / (d2 - d1)


def integrate_blowup(
    params: SystemParams,
    init: FunctionalState,
    horizon: float,
    opts: IntegratorOptions = IntegratorOptions(),
) -> Tuple[FunctionalTrajectory, BlowupReport]:
    """Integrate to ``|U| + |V| >= threshold`` or the horizon.

    The crossing time is computed at every tolerance in ``opts.rtols``; the
    finest run supplies the trajectory and the sequence is extrapolated.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    y0 = init.as_array()
    levels, statuses, steps, last = [], [], 0, None
    for i, rtol in enumerate(opts.rtols):
        finest = i == len(opts.rtols) - 1
        sol, status, t_cross = _single_run(params, y0, horizon, rtol, opts, finest)
        levels.append(t_cross)
        statuses.append(status)
        steps = len(sol.t) - 1
        last = sol
    status = statuses[-1]
    blew = status == STATUS_BLEW_UP
    if blew and all(s == STATUS_BLEW_UP for s in statuses):
        T_est = _extrapolate(levels)
        T_low, T_high = min(levels + [T_est]), max(levels + [T_est])
    elif blew:
        T_est = levels[-1]
        T_low = T_high = T_est
    else:
        T_est = math.nan
        T_low, T_high = levels[-1], horizon
    t, y = last.t, last.y.T
    keep = np.concatenate([[True], np.diff(t) > 0])
    traj = FunctionalTrajectory(
        t[keep], y[keep], dense=last.sol,
        meta={"rtol": opts.rtols[-1], "atol": opts.atol, "method": opts.method},
    )
    report = BlowupReport(
        blew_up=blew, status=status, T_low=float(T_low), T_high=float(T_high),
        threshold_used=opts.threshold, refinement=list(zip(opts.rtols, levels)),
        T_est=float(T_est), steps=int(steps), engine="ode",
    )
    return traj, report


# --- closed-form linear flow and a splitting step ------------------------------


def u_lin(t, U0: float, Up0: float, roots: CharRoots):
    """Linear damped flow of the average of ``u`` and its derivative."""
    t = np.asarray(t, dtype=float)
    k1, k2 = roots.k1, roots.k2
    if roots.double_root:
        e = np.exp(-k1 * t)
        val = e * ((1 + k1 * t) * U0 + t * Up0)
        der = e * (-k1 * k1 * t * U0 + (1 - k1 * t) * Up0)
    else:
        e1, e2 = np.exp(-k1 * t), np.exp(-k2 * t)
        d = k1 - k2
        val = (k1 * e2 - k2 * e1) / d * U0 + (e2 - e1) / d * Up0
        der = k1 * k2 * (e1 - e2) / d * U0 + (k1 * e1 - k2 * e2) / d * Up0
    return val, der


def strang_step_ode(state: FunctionalState, params: SystemParams, dt: float,
                    roots: Optional[CharRoots] = None) -> FunctionalState:
    """Half kick, exact linear flow, half kick for the reduced ODE pair."""
    roots = roots or char_roots(params)
    p, q = float(params.p), float(params.q)
    U, Up, V, Vp = state.U, state.Up, state.V, state.Vp
    Up += 0.5 * dt * abs(V) ** p
    Vp += 0.5 * dt * abs(U) ** q
    U, Up = (float(x) for x in u_lin(dt, U, Up, roots))
    V = V + dt * Vp
    Up += 0.5 * dt * abs(V) ** p
    Vp += 0.5 * dt * abs(U) ** q
    return FunctionalState(state.t + dt, U, Up, V, Vp)


# --- frame and first-bound verification ----------------------------------------


def _damped_double_integral(f: np.ndarray, h: float, k_outer: float, k_inner: float) -> np.ndarray:
    """Trapezoid values of ``int_0^t e^{-ko(t-s)} int_0^s e^{-ki(s-tau)} f dtau ds``.

    Uses the exponentially weighted recursion so nothing overflows for
    large ``t``.
    """
    ei, eo = math.exp(-k_inner * h), math.exp(-k_outer * h)
    inner = np.zeros_like(f)
    for i in range(1, len(f)):
        inner[i] = ei * inner[i - 1] + 0.5 * h * (ei * f[i - 1] + f[i])
    outer = np.zeros_like(f)
    for i in range(1, len(f)):
        outer[i] = eo * outer[i - 1] + 0.5 * h * (eo * inner[i - 1] + inner[i])
    return outer


@dataclass
class FrameReport:
    times: np.ndarray
    margin_U: np.ndarray
    margin_V: np.ndarray
    quad_error_U: np.ndarray
    quad_error_V: np.ndarray
    tolerance_factor: float = 10.0

    @property
    def worst_margin(self) -> float:
        return float(min(self.margin_U.min(), self.margin_V.min()))

    @property
    def passed(self) -> bool:
        okU = self.margin_U >= -self.tolerance_factor * self.quad_error_U
        okV = self.margin_V >= -self.tolerance_factor * self.quad_error_V
        return bool(np.all(okU) and np.all(okV))

    @property
    def worst_normalized(self) -> float:
        """Most negative margin in units of the quadrature error estimate."""
        ratios = np.concatenate([
            self.margin_U / self.quad_error_U, self.margin_V / self.quad_error_V
        ])
        return float(ratios.min())


def _frames_on_grid(traj, t_max, n, k1, k2, p, q):
    tt = np.linspace(0.0, t_max, n + 1)
    U, _, V, _ = traj(tt)
    fU = np.abs(V) ** p
    fV = np.abs(U) ** q
    h = tt[1] - tt[0]
    rhsU = _damped_double_integral(fU, h, k1, k2)
    rhsV = _damped_double_integral(fV, h, 0.0, 0.0)
    return tt, U, V, rhsU, rhsV


def verify_frames(
    traj: FunctionalTrajectory,
    params: SystemParams,
    roots: Optional[CharRoots] = None,
    t_max: Optional[float] = None,
    n_samples: int = 100,
    n_quad: int = 20000,
) -> FrameReport:
    """Check both integral frames at ``n_samples`` times in ``[0, t_max]``.

    The double integrals are computed by composite trapezoid on grids of
    ``n_quad`` and ``2 n_quad`` intervals; the Richardson-corrected value is
    compared against the trajectory and the coarse/fine difference / 3 is
    the error estimate (floored at roundoff).
    """
    roots = roots or char_roots(params)
    t_max = traj.t_end if t_max is None else t_max
    p, q = float(params.p), float(params.q)
    k1, k2 = roots.k1, roots.k2
    samples = traj(np.linspace(0.0, t_max, 257))
    if np.any(samples[0] < 0) or np.any(samples[2] < 0):
        raise ValueError("frames are derived for non-negative averages; trajectory has negative U or V")
    m = n_quad // n_samples
    n_quad = m * n_samples
    tc, U, V, cU, cV = _frames_on_grid(traj, t_max, n_quad, k1, k2, p, q)
    tf, _, _, fU, fV = _frames_on_grid(traj, t_max, 2 * n_quad, k1, k2, p, q)
    fU, fV = fU[::2], fV[::2]
    idx = np.arange(0, n_quad + 1, m)
    eps = np.finfo(float).eps
    errU = np.abs(fU - cU)[idx] / 3 + 8 * eps * (np.abs(fU[idx]) + np.abs(U[idx])) + 1e-300
    errV = np.abs(fV - cV)[idx] / 3 + 8 * eps * (np.abs(fV[idx]) + np.abs(V[idx])) + 1e-300
    rU = fU + (fU - cU) / 3
    rV = fV + (fV - cV) / 3
    return FrameReport(tc[idx], (U - rU)[idx], (V - rV)[idx], errU, errV)


@dataclass
class FirstBoundReport:
    passed: bool
    worst_V_margin: float
    worst_U_margin: Optional[float]


def verify_first_bounds(
    traj: FunctionalTrajectory,
    params: SystemParams,
    data: HomogeneousData,
    t_max: Optional[float] = None,
    n_samples: int = 200,
    rtol: float = 1e-9,
) -> FirstBoundReport:
    """``V(t) >= C_r eps t^r`` everywhere, and ``U(t) >= C2 eps`` for ``t >= 1/b`` if massless."""
    t_max = traj.t_end if t_max is None else t_max
    eps = params.epsilon
    tt = np.linspace(0.0, t_max, n_samples)
    U, _, V, _ = traj(tt)
    boundV = data.C_r * eps * tt**data.r
    mV = V - boundV
    okV = np.all(mV >= -rtol * np.maximum(np.abs(boundV), 1e-300))
    worstV = float(mV.min())
    worstU = None
    okU = True
    if params.m2 == 0:
        sel = tt >= 1.0 / float(params.b)
        if np.any(sel):
            boundU = data.C2(float(params.b)) * eps
            mU = U[sel] - boundU
            okU = bool(np.all(mU >= -rtol * max(abs(boundU), 1e-300)))
            worstU = float(mU.min())
    return FirstBoundReport(bool(okV and okU), worstV, worstU)
