"""Epsilon sweeps, lifespan exponent fits and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .iteration import (
    SlicingScheme, ThresholdWarning, build_slicing, kg_thresholds, kg_upper_T,
    massless_sequences, massless_upper_T,
)
from .model import (
    CaseTag, MassCase, SystemParams, char_roots, lower_lifespan_exponent,
    upper_lifespan_exponent,
)
from .oracle import (
    NONCONVERGENT_STATUSES as NONCONVERGENT, STATUS_BLEW_UP, STATUS_CENSORED, STATUS_SURVIVED, HomogeneousData,
    IntegratorOptions, integrate_blowup, reduce_homogeneous,
)

ENGINES = ("ode", "pde")
STATUS_INCONCLUSIVE = "inconclusive"
CSV_COLUMNS = ("epsilon", "T_est", "T_low", "T_high", "status", "steps", "refinements")


class ConfigError(ValueError):
    """Raised for configurations that cannot be run."""


def log_grid(lo: float, hi: float, n: int) -> Tuple[float, ...]:
    """``n`` log-spaced points from ``hi`` down to ``lo``."""
    if not (0 < lo < hi) or n < 2:
        raise ConfigError(f"grid needs 0 < lo < hi and n >= 2, got {lo}:{hi}:{n}")
    return tuple(float(x) for x in np.logspace(math.log10(hi), math.log10(lo), n))


def parse_grid(text: str) -> Tuple[float, ...]:
    try:
        lo, hi, n = text.split(":")
        return log_grid(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: expected lo:hi:n") from exc


@dataclass(frozen=True)
class SweepConfig:
    engine: str = "ode"
    b: float = 2.0
    m2: float = 0.75
    p: float = 2.0
    q: float = 2.0
    data: str = "homogeneous"
    constants: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    epsilon_grid: Tuple[float, ...] = log_grid(1e-5, 1e-2, 8)
    horizon_factor: float = 10.0
    horizon_cap: float = 1e7
    seed: int = 0
    dim: int = 3
    modes: int = 16
    rtols: Tuple[float, ...] = (1e-8, 1e-10, 1e-12)
    threshold: float = 1e8
    pde_scales: Tuple[float, ...] = (1.0, 0.5, 0.25)
    strict_threshold: bool = False

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        g = self.epsilon_grid
        if len(g) < 4:
            raise ConfigError(f"insufficient grid: {len(g)} points, need at least 4")
        if any(not e > 0 for e in g):
            raise ConfigError("epsilon values must be positive")
        if any(a <= b for a, b in zip(g, g[1:])):
            raise ConfigError("epsilon grid must be strictly decreasing")
        if len(self.constants) != 4:
            raise ConfigError("constants must have four entries (u0, u1, v0, v1)")
        if self.engine == "ode" and self.data != "homogeneous":
            raise ConfigError("the ode engine only accepts the homogeneous data family")
        if self.horizon_factor <= 0 or self.horizon_cap <= 0:
            raise ConfigError("horizon factor and cap must be positive")
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.b, self.m2, self.p, self.q)

    @property
    def homogeneous(self) -> HomogeneousData:
        return HomogeneousData(*self.constants)

    @property
    def r(self) -> int:
        return self.homogeneous.r

    @property
    def case(self) -> CaseTag:
        return CaseTag.for_params(self.params, self.r)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


# --- theory side ---------------------------------------------------------------


def theory_audit(params: SystemParams, data: HomogeneousData) -> dict:
    """Exponents, roots and proof-side thresholds for a parameter set."""
    r = data.r
    case = CaseTag.for_params(params, r)
    up = upper_lifespan_exponent(case, params.p, params.q)
    lo = lower_lifespan_exponent(case, params.p, params.q)
    roots = char_roots(params)
    out = {
        "case": case.mass_case.value,
        "r": r,
        "roots": {"k1": roots.k1, "k2": roots.k2, "double_root": roots.double_root},
        "upper_exponent": float(up.value),
        "lower_exponent": None if lo.value is None else float(lo.value),
        "lower_applicability": lo.applicability,
    }
    if not data.C_r > 0:
        out["thresholds"] = None
        return out
    if case.mass_case is MassCase.DAMPED_KLEIN_GORDON:
        sl = build_slicing(SlicingScheme.TWO_STEP, params, roots)
        th = kg_thresholds(params, roots, sl, data.C_r, r)
        out["thresholds"] = {k: _jsonable(v) for k, v in th.to_dict().items()}
    else:
        sl = build_slicing(SlicingScheme.ONE_STEP, params)
        seq = massless_sequences(params, data.C2(float(params.b)), data.C_r, r, slicing=sl)
        out["thresholds"] = {k: _jsonable(v) for k, v in seq.audit().items()}
    out["slicing"] = sl.to_dict()
    return out


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def deadline(params: SystemParams, data: HomogeneousData, eps: float) -> Optional[float]:
    """Proof-side upper lifespan bound at ``eps``; ``None`` when unavailable."""
    if not data.C_r > 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdWarning)
        if params.mass_case is MassCase.DAMPED_KLEIN_GORDON:
            roots = char_roots(params)
            sl = build_slicing(SlicingScheme.TWO_STEP, params, roots)
            th = kg_thresholds(params, roots, sl, data.C_r, data.r)
            return kg_upper_T(eps, th)
        seq = massless_sequences(params, data.C2(float(params.b)), data.C_r, data.r)
        return massless_upper_T(eps, seq)


def horizon_for(config: SweepConfig, eps: float) -> float:
    d = deadline(config.params, config.homogeneous, eps)
    if d is None or not math.isfinite(d):
        return config.horizon_cap
    return min(config.horizon_factor * d, config.horizon_cap)


# --- rows and fits ------------------------------------------------------------------


@dataclass(frozen=True)
class RowResult:
    epsilon: float
    T_est: Optional[float]
    T_low: float
    T_high: float
    status: str
    steps: int
    refinements: Tuple[Tuple[float, float], ...]

    def csv_row(self) -> List[str]:
        ref = ";".join(f"{a!r}:{b!r}" for a, b in self.refinements)
        return [repr(self.epsilon), "" if self.T_est is None else repr(self.T_est),
                repr(self.T_low), repr(self.T_high), self.status, str(self.steps), ref]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["refinements"] = [list(x) for x in self.refinements]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RowResult":
        d = dict(d)
        d["refinements"] = tuple(tuple(x) for x in d["refinements"])
        return cls(**d)


def run_row(config: SweepConfig, index: int) -> RowResult:
    """One blow-up measurement at ``epsilon_grid[index]``."""
    eps = config.epsilon_grid[index]
    params = config.params.with_epsilon(eps)
    horizon = horizon_for(config, eps)
    if config.engine == "ode":
        opts = IntegratorOptions(threshold=config.threshold, rtols=config.rtols)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, rep = integrate_blowup(params, reduce_homogeneous(params, config.homogeneous), horizon, opts)
    else:
        from .spectral import PDEOptions, TorusGrid, make_data, solve_blowup

        grid = TorusGrid(config.dim, config.modes)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fields_ = make_data(grid, config.data, config.homogeneous, seed=config.seed)
        opts = PDEOptions(threshold=config.threshold, scales=config.pde_scales)
        rep = solve_blowup(grid, params, fields_, horizon, opts)[0]
    status = STATUS_CENSORED if rep.status == STATUS_SURVIVED else rep.status
    T_est = rep.T_est if rep.blew_up and math.isfinite(rep.T_est) else None
    refs = tuple((float(a), float(b)) for a, b in rep.refinement)
    return RowResult(float(eps), T_est, float(rep.T_low), float(rep.T_high), status, int(rep.steps), refs)


def _row_job(args):
    cfg_dict, index = args
    return index, run_row(SweepConfig.from_dict(cfg_dict), index)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    r2: float
    n: int


def fit_exponent(rows) -> FitResult:
    """OLS of ``ln T`` against ``ln(1/eps)`` over the blown-up rows.

    ``rows`` may hold :class:`RowResult` objects or ``(eps, T)`` pairs.
    """
    pts = []
    for row in rows:
        if isinstance(row, RowResult):
            if row.status == STATUS_BLEW_UP and row.T_est is not None:
                pts.append((row.epsilon, row.T_est))
        else:
            pts.append(tuple(row))
    if len(pts) < 4:
        raise ValueError(f"need at least 4 blow-up rows to fit, got {len(pts)}")
    eps, T = np.array(pts, dtype=float).T
    if np.any(eps <= 0) or np.any(T <= 0):
        raise ValueError("epsilon and T must be positive")
    x, y = -np.log(eps), np.log(T)
    if np.ptp(x) == 0:
        raise ValueError("degenerate grid: all epsilon values identical")
    res = stats.linregress(x, y)
    return FitResult(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue**2), len(pts))


@dataclass(frozen=True)
class Verdict:
    status: str  # pass, fail or inconclusive
    slope: Optional[float]
    upper: float
    lower: Optional[float]
    target: Optional[float]
    tolerance: float
    caveats: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["caveats"] = list(self.caveats)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        d = dict(d)
        d["caveats"] = tuple(d["caveats"])
        return cls(**d)


def compare_to_theory(
    fit: Optional[FitResult],
    case: CaseTag,
    p,
    q,
    tol_rel: float = 0.10,
    tol_abs: float = 0.03,
    caveats: Sequence[str] = (),
) -> Verdict:
    """KG: within ``tol_rel`` of the sharp exponent. Massless: inside the band widened by ``tol_abs``."""
    up = upper_lifespan_exponent(case, p, q)
    lo = lower_lifespan_exponent(case, p, q)
    upper = float(up.value)
    lower = None if lo.value is None else float(lo.value)
    notes = list(caveats)
    if lo.applicability and not lo.applicable:
        notes.append(f"lower bound not applicable ({lo.applicability}); upper-bound-only check")
    kg = case.mass_case is MassCase.DAMPED_KLEIN_GORDON
    target = upper if kg else None
    tol = tol_rel if kg else tol_abs
    if fit is None:
        return Verdict(STATUS_INCONCLUSIVE, None, upper, lower, target, tol, tuple(notes))
    s = fit.slope
    if kg and lower is not None:
        ok = abs(s - upper) <= tol_rel * upper
    elif kg:
        ok = s <= upper * (1 + tol_rel)
    else:
        ok = lower - tol_abs <= s <= upper + tol_abs
    return Verdict("pass" if ok else "fail", s, upper, lower, target, tol, tuple(notes))


# --- orchestration -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    rows: Tuple[RowResult, ...]
    fit: Optional[FitResult]
    verdict: Verdict
    audit: dict = field(default_factory=dict)
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "audit": self.audit,
            "fit": None if self.fit is None else asdict(self.fit),
            "verdict": self.verdict.to_dict(),
            "flags": list(self.flags),
            "rows": [r.to_dict() for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(
            SweepConfig.from_dict(d["config"]),
            tuple(RowResult.from_dict(r) for r in d["rows"]),
            None if d["fit"] is None else FitResult(**d["fit"]),
            Verdict.from_dict(d["verdict"]),
            d["audit"],
            tuple(d["flags"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def nonconvergent(self) -> bool:
        return bool(self.rows) and all(r.status in NONCONVERGENT for r in self.rows)


def _caveats(config: SweepConfig) -> List[str]:
    out = []
    d = config.homogeneous
    if config.data == "random-bandlimited":
        out.append("random-bandlimited data may change sign; theorem sign hypotheses not enforced")
    if config.params.mass_case is MassCase.MASSLESS and d.u0 == 0 and d.u1 == 0:
        out.append("u data trivial: the theorem needs a nontrivial non-negative u pair; band not guaranteed")
    if not d.C_r > 0:
        out.append("v data trivial: no proof-side deadline")
    return out


def run_sweep(config: SweepConfig, jobs: int = 1) -> SweepResult:
    """Measure every grid point, aggregate by grid index, fit and compare."""
    audit = theory_audit(config.params, config.homogeneous)
    th = audit.get("thresholds") or {}
    eps0 = th.get("eps0")
    if config.strict_threshold and eps0 is not None and max(config.epsilon_grid) > eps0:
        raise ConfigError(f"strict threshold: grid exceeds eps0={eps0:g}")
    audit["eps0"] = eps0
    audit["horizons"] = [horizon_for(config, e) for e in config.epsilon_grid]
    n = len(config.epsilon_grid)
    rows: List[Optional[RowResult]] = [None] * n
    if jobs <= 1:
        for i in range(n):
            rows[i] = run_row(config, i)
    else:
        cfg = config.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_row_job, (cfg, i)) for i in range(n)]
            for fut in as_completed(futs):
                i, row = fut.result()
                rows[i] = row
    return summarize(config, rows, audit)


def summarize(config: SweepConfig, rows: Sequence[RowResult], audit: Optional[dict] = None) -> SweepResult:
    rows = tuple(rows)
    flags = []
    censored = sum(r.status == STATUS_CENSORED for r in rows)
    if rows and censored > 0.25 * len(rows):
        flags.append(f"censored rows exceed 25% ({censored}/{len(rows)})")
    bad = sum(r.status in NONCONVERGENT for r in rows)
    if bad:
        flags.append(f"{bad} non-convergent rows excluded from the fit")
    try:
        fit = fit_exponent(rows)
    except ValueError:
        fit = None
    verdict = compare_to_theory(fit, config.case, config.p, config.q, caveats=_caveats(config))
    return SweepResult(config, rows, fit, verdict, audit or {}, tuple(flags))


# --- emission ---------------------------------------------------------------------------


def rows_csv(rows: Sequence[RowResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


def plot_data(result: SweepResult, samples: int = 50) -> str:
    """``kind, ln_inv_eps, ln_T`` with measured points then fitted-line samples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("kind", "ln_inv_eps", "ln_T"))
    for r in result.rows:
        if r.status == STATUS_BLEW_UP and r.T_est is not None:
            w.writerow(("data", repr(-math.log(r.epsilon)), repr(math.log(r.T_est))))
    if result.fit is not None:
        xs = [-math.log(e) for e in result.config.epsilon_grid]
        for x in np.linspace(min(xs), max(xs), samples):
            w.writerow(("fit", repr(float(x)), repr(float(result.fit.intercept + result.fit.slope * x))))
    return buf.getvalue()


def render_svg(result: SweepResult) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lifespan-lab"
    fig, ax = plt.subplots(figsize=(5, 4))
    pts = [(r.epsilon, r.T_est) for r in result.rows if r.status == STATUS_BLEW_UP and r.T_est]
    if pts:
        e, T = zip(*pts)
        ax.loglog(1 / np.array(e), T, "o", label="measured")
    if result.fit is not None:
        x = 1 / np.array(result.config.epsilon_grid)
        ax.loglog(x, np.exp(result.fit.intercept) * x**result.fit.slope, "-",
                  label=f"slope {result.fit.slope:.3f}")
    ax.set_xlabel("1/epsilon")
    ax.set_ylabel("T(epsilon)")
    ax.set_title(f"verdict: {result.verdict.status}")
    ax.legend(loc="best")
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def emit(result: SweepResult, out_dir, formats: Sequence[str] = ("csv", "json")) -> List[str]:
    """Write the requested artifacts; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        written.append(path)

    for fmt in formats:
        if fmt == "csv":
            put("sweep.csv", rows_csv(result.rows))
            put("plot_data.csv", plot_data(result))
        elif fmt == "json":
            put("sweep.json", result.to_json())
        elif fmt == "svg":
            put("sweep.svg", render_svg(result))
        else:
            raise ConfigError(f"unknown format {fmt!r}")
    return written


def load_result(path) -> SweepResult:
    with open(path) as fh:
        return SweepResult.from_dict(json.load(fh))
