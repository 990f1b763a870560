"""Verification suites shared by the CLI and the acceptance tests.

Each check returns a :class:`Check` with a pass flag and the measured
quantity, so callers can print one line per check.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .iteration import (
    SlicingScheme, build_slicing, envelope_V, kg_sequences, massless_sequences,
)
from .model import LAMBDA_INDEX, MassCase, SystemParams, char_roots
from .oracle import (
    HomogeneousData, IntegratorOptions, integrate_blowup, reduce_homogeneous,
    verify_first_bounds, verify_frames,
)
from . import spectral as sp


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail or self.value}"


def ode_run(params: SystemParams, data: HomogeneousData, horizon: float = 1e7):
    """``(report, trajectory)`` of a homogeneous oracle run."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj, rep = integrate_blowup(params, reduce_homogeneous(params, data), horizon, IntegratorOptions())
    return rep, traj


def check_frames(params: SystemParams, data: HomogeneousData) -> Check:
    rep, traj = ode_run(params, data)
    fr = verify_frames(traj, params, t_max=0.95 * rep.T_est)
    return Check("frames", fr.passed, fr.worst_normalized,
                 f"worst margin {fr.worst_normalized:.3g} x quadrature error (need >= -10)")


def check_first_bounds(params: SystemParams, data: HomogeneousData) -> Check:
    rep, traj = ode_run(params, data)
    fb = verify_first_bounds(traj, params, data, t_max=0.95 * rep.T_est)
    return Check("first-bounds", fb.passed, fb.worst_V_margin, f"worst V margin {fb.worst_V_margin:.3g}")


def envelope_margins(params: SystemParams, data: HomogeneousData, n: int = 100, rtol: float = 1e-8):
    """``(V_num - envelope) / (rtol |V_num|)`` at ``n`` times in ``[0, 0.95 T]``."""
    rep, traj = ode_run(params, data)
    r = data.r
    if params.mass_case is MassCase.DAMPED_KLEIN_GORDON:
        sl = build_slicing(SlicingScheme.TWO_STEP, params, char_roots(params))
        seq = kg_sequences(params, data.C_r, r, sl)
    else:
        sl = build_slicing(SlicingScheme.ONE_STEP, params)
        seq = massless_sequences(params, data.C2(float(params.b)), data.C_r, r, slicing=sl)
    tt = np.linspace(0.0, 0.95 * rep.T_est, n)
    V = traj(tt)[2]
    env = np.array([envelope_V(float(t), seq, sl) for t in tt])
    scale = rtol * np.maximum(np.abs(V), 1e-300)
    return tt, V, env, (V - env) / scale


def check_envelope(params: SystemParams, data: HomogeneousData, n: int = 100) -> Check:
    _, _, _, norm = envelope_margins(params, data, n)
    worst = float(norm.min())
    return Check("envelope", worst >= -1.0, worst, f"worst (V - envelope) {worst:.3g} x tolerance (need >= -1)")


# --- linear theory --------------------------------------------------------------------


def propagator_exactness(cases=((2.0, 0.75), (2.0, 0.0), (3.0, 2.0), (2.0, 1.0), (0.0, 0.0)),
                         lams=(0.0, 0.25, 1.0, 1 - 1e-9, 1 + 1e-9, 4.0, 9.0, 50.0),
                         dts=(0.01, 0.7, 3.0)) -> float:
    """Max entry error of the propagator against tight reference solves."""
    worst = 0.0
    for b, m2 in cases:
        for lam in lams:
            for dt in dts:
                M = sp.propagator(np.array([lam]), b, m2, dt)[0]
                for col, y0 in enumerate(([1.0, 0.0], [0.0, 1.0])):
                    sol = solve_ivp(lambda t, y: [y[1], -b * y[1] - (lam + m2) * y[0]], (0, dt), y0,
                                    method="DOP853", rtol=1e-13, atol=1e-15)
                    worst = max(worst, float(np.max(np.abs(sol.y[:, -1] - M[:, col]))))
    return worst


def undamped_energy_drift(grid: sp.TorusGrid, seed: int = 0, dt: float = 0.1, T: float = 10.0) -> float:
    """Max relative change per unit time of ``||v_t||^2 + ||grad v||^2`` under the exact linear flow."""
    rng = np.random.default_rng(seed)
    v0, v1 = sp.random_bandlimited(grid, rng, band=4), sp.random_bandlimited(grid, rng, band=4)
    vh, vth = grid.to_spectral(v0) * grid.mask, grid.to_spectral(v1) * grid.mask
    tab = sp.PropagatorTable(grid.lam, 0.0, 0.0, dt)

    def energy(a, at):
        return grid.l2_norm(at) ** 2 + grid.grad_norm(a) ** 2

    E0 = energy(vh, vth)
    worst, t = 0.0, 0.0
    for _ in range(int(round(T / dt))):
        vh, vth = tab.apply(vh, vth)
        t += dt
        worst = max(worst, abs(energy(vh, vth) - E0) / E0 / t)
    return worst


def strang_order_ratios(params: SystemParams = SystemParams(2.0, 0.75, 2, 2, 1.0), N: int = 32):
    """Global error ratios at ``t = 1`` for ``dt = 1/10, 1/20, 1/40`` against a ``dt/16`` reference."""
    grid = sp.TorusGrid(1, N)
    x = grid.x[0]
    fields = (0.1 + 0.05 * np.sin(x), np.zeros_like(x), 0.2 + 0.01 * np.cos(x), 0.1 + 0.03 * np.cos(2 * x))

    def run(n):
        return sp.evolve_fixed(sp.initial_state(grid, params, fields), params, 1.0 / n, n)

    ref = run(40 * 16)
    errs = []
    for n in (10, 20, 40):
        s = run(n)
        errs.append(max(float(np.max(np.abs(a - b))) for a, b in
                        zip((s.uh, s.uth, s.vh, s.vth), (ref.uh, ref.uth, ref.vh, ref.vth))))
    return [errs[0] / errs[1], errs[1] / errs[2]]


def decay_checks(grid: sp.TorusGrid, seed: int = 0, horizon: float = 20.0) -> List[Check]:
    out = []
    kg = SystemParams(3.0, 2.0, 2, 2, 1.0)
    ml = SystemParams(2.0, 0.0, 2, 2, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = sp.make_data(grid, "random-bandlimited", HomogeneousData(1, 1, 1, 1), seed=seed)
    k2 = char_roots(kg).k2
    fit = sp.verify_linear_decay(grid, kg, data, horizon, 0, 0)
    rel = abs(fit.fitted_rate - k2) / k2
    out.append(Check("decay KG rate", fit.passed and rel < 0.05, rel,
                     f"fitted {fit.fitted_rate:.6g} vs {k2:.6g} (rel {rel:.2g}, need < 0.05)"))
    for j, k in LAMBDA_INDEX:
        fit = sp.verify_linear_decay(grid, ml, data, horizon, j, k)
        out.append(Check(f"decay massless u (j,k)=({j},{k})", fit.passed, fit.drift,
                         f"C={fit.C:.4g}, drift {fit.drift:.2g} (need < 0.02)"))
    for r in (0, 1):
        d = data if r else (data[0], data[1], data[2], np.zeros(grid.shape))
        for j, k in LAMBDA_INDEX:
            fit = sp.verify_linear_decay(grid, ml, d, horizon, j, k, which="v")
            out.append(Check(f"decay v r={r} (j,k)=({j},{k})", fit.passed, fit.drift,
                             f"C={fit.C:.4g}, drift {fit.drift:.2g} (need < 0.02)"))
    return out


def gn_checks(gammas: Sequence[float] = (3, 4, 6), n_samples: int = 100, seed: int = 0) -> List[Check]:
    grid = sp.TorusGrid(*sp.GN_CALIBRATION_GRID)
    rng = np.random.default_rng(seed)
    out = []
    for g in gammas:
        C = sp.GN_EMPIRICAL_CONSTANTS[g]
        worst = max(sp.gn_check(grid, sp.gn_sample(grid, rng), g) for _ in range(n_samples))
        const = all(sp.gn_check(grid, np.full(grid.shape, c), g) == 1.0 for c in (0.3, 1.0, -2.5))
        out.append(Check(f"gn gamma={g}", worst <= C and const, worst,
                         f"max ratio {worst:.4g} <= C={C}; constants give 1: {const}"))
    return out


def linear_checks(seed: int = 0) -> List[Check]:
    err = propagator_exactness()
    drift = undamped_energy_drift(sp.TorusGrid(3, 16), seed)
    ratios = strang_order_ratios()
    return [
        Check("propagator exactness", err < 1e-10, err, f"max entry error {err:.2g} (need < 1e-10)"),
        Check("undamped energy", drift < 1e-12, drift, f"drift {drift:.2g} per unit time (need < 1e-12)"),
        Check("strang order", all(3.6 <= r <= 4.4 for r in ratios), min(ratios),
              "ratios " + ", ".join(f"{r:.4f}" for r in ratios) + " (need [3.6, 4.4])"),
    ]
