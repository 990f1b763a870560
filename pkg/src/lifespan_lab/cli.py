"""Command-line entry point: ``python -m lifespan_lab <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from typing import Dict, List, Optional

import tomli

from .model import SystemParams
from .oracle import NONCONVERGENT_STATUSES, HomogeneousData, IntegratorOptions, integrate_blowup, reduce_homogeneous
from .sweep import (
    ConfigError, SweepConfig, deadline, emit, load_result, parse_grid, render_svg,
    plot_data, run_sweep, theory_audit,
)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_VERDICT = 0, 2, 3, 4
COMMANDS = ("theory", "ode", "pde", "sweep", "verify", "emit-plots")
SUITES = ("frames", "envelope", "first-bounds", "decay", "gn", "linear")

# flag defaults; a config file sits between these and the command line
DEFAULTS: Dict[str, object] = {
    "b": 2.0, "m2": 0.75, "p": 2.0, "q": 2.0, "eps": 1e-3,
    "grid": "1e-5:1e-2:8", "engine": "ode", "data": "homogeneous",
    "constants": "0,0,0,1", "dim": 3, "modes": 16, "out": None, "seed": 0,
    "format": "csv,json", "jobs": 1, "strict": False, "horizon": None,
    "horizon_cap": 1e7, "suite": ",".join(SUITES),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lifespan-lab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat TOML file; flags override it")
        sp.add_argument("--b", type=float)
        sp.add_argument("--m2", type=float)
        sp.add_argument("--p", type=float)
        sp.add_argument("--q", type=float)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--grid", help="lo:hi:n log-spaced epsilon grid")
        sp.add_argument("--engine", choices=("ode", "pde"))
        sp.add_argument("--data", help="homogeneous, perturbed or random-bandlimited")
        sp.add_argument("--constants", help="u0,u1,v0,v1 before scaling by eps")
        sp.add_argument("--dim", type=int)
        sp.add_argument("--modes", type=int)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--format", help="comma list of csv, json, svg")
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--horizon", type=float, help="single-run horizon (default: 10x deadline, capped)")
        sp.add_argument("--horizon-cap", dest="horizon_cap", type=float)
        sp.add_argument("--suite", help="verify: comma list of " + ",".join(SUITES))
        sp.add_argument("--strict", action="store_true", default=None)
    return ap


def read_config(path: Optional[str]) -> Dict[str, object]:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for k, v in raw.items():
        key = k.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(v, dict):
            raise ConfigError(f"config must be flat; {k!r} is a table")
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        out[key] = v
    return out


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    opts = dict(DEFAULTS)
    opts.update(read_config(args.config))
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def _params(o) -> SystemParams:
    try:
        return SystemParams(float(o["b"]), float(o["m2"]), float(o["p"]), float(o["q"]), float(o["eps"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _data(o) -> HomogeneousData:
    try:
        d = HomogeneousData.parse(str(o["constants"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not d.nonnegative and o["data"] != "random-bandlimited":
        raise ConfigError(f"data constants must be non-negative, got {d.as_tuple()}")
    return d


def _horizon(o, params, data) -> float:
    if o["horizon"] is not None:
        return float(o["horizon"])
    dl = deadline(params, data, params.epsilon)
    cap = float(o["horizon_cap"])
    return cap if dl is None or not math.isfinite(dl) else min(10 * dl, cap)


def _formats(o) -> List[str]:
    fmts = [f.strip() for f in str(o["format"]).split(",") if f.strip()]
    bad = [f for f in fmts if f not in ("csv", "json", "svg")]
    if bad:
        raise ConfigError(f"unknown format(s) {bad}")
    return fmts


def _write(out: Optional[str], name: str, text: str) -> None:
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, name), "w", newline="") as fh:
            fh.write(text)


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2, default=float))


# --- commands ---------------------------------------------------------------------


def cmd_theory(o) -> int:
    params, data = _params(o), _data(o)
    audit = theory_audit(params, data)
    dl = deadline(params, data, params.epsilon)
    audit["epsilon"] = params.epsilon
    audit["deadline"] = dl
    _print_json(audit)
    _write(o["out"], "theory.json", json.dumps(audit, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_ode(o) -> int:
    params, data = _params(o), _data(o)
    if o["data"] != "homogeneous":
        raise ConfigError("the ode engine only accepts the homogeneous data family")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj, rep = integrate_blowup(params, reduce_homogeneous(params, data), _horizon(o, params, data),
                                     IntegratorOptions())
    print(rep.to_json())
    _write(o["out"], "report.json", rep.to_json())
    if o["out"]:
        traj.to_csv(os.path.join(o["out"], "trajectory.csv"))
    return EXIT_NONCONVERGENCE if rep.status in NONCONVERGENT_STATUSES else EXIT_OK


def cmd_pde(o) -> int:
    from . import spectral as sp

    params, data = _params(o), _data(o)
    try:
        grid = sp.TorusGrid(int(o["dim"]), int(o["modes"]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fields = sp.make_data(grid, str(o["data"]), data, seed=int(o["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rep, traj, hist, ledger = sp.solve_blowup(grid, params, fields, _horizon(o, params, data))
    print(rep.to_json())
    if hist.alias_alarm:
        print(f"warning: aliasing alarm, max masked fraction {hist.max_alias_fraction:.3g}", file=sys.stderr)
    if o["out"]:
        _write(o["out"], "report.json", rep.to_json())
        hist.to_csv(os.path.join(o["out"], "history.csv"))
        traj.to_csv(os.path.join(o["out"], "trajectory.csv"))
    return EXIT_NONCONVERGENCE if rep.status in NONCONVERGENT_STATUSES else EXIT_OK


def sweep_config(o) -> SweepConfig:
    data = _data(o)
    return SweepConfig(
        engine=str(o["engine"]), b=float(o["b"]), m2=float(o["m2"]), p=float(o["p"]), q=float(o["q"]),
        data=str(o["data"]), constants=data.as_tuple(), epsilon_grid=parse_grid(str(o["grid"])),
        horizon_cap=float(o["horizon_cap"]), seed=int(o["seed"]), dim=int(o["dim"]), modes=int(o["modes"]),
    )


def cmd_sweep(o) -> int:
    cfg = sweep_config(o)
    fmts = _formats(o)
    res = run_sweep(cfg, jobs=int(o["jobs"]))
    for row in res.rows:
        T = "-" if row.T_est is None else f"{row.T_est:.6g}"
        print(f"eps={row.epsilon:.4g}  T={T}  status={row.status}")
    fit = res.fit
    print("fit: " + ("none" if fit is None else f"slope={fit.slope:.4f} stderr={fit.stderr:.2g} R2={fit.r2:.6f}"))
    print(f"verdict: {res.verdict.status}")
    for c in res.verdict.caveats + res.flags:
        print(f"note: {c}")
    if o["out"]:
        try:
            emit(res, o["out"], fmts)
        except OSError as exc:
            print(f"error: cannot write outputs: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if res.nonconvergent:
        return EXIT_NONCONVERGENCE
    if o["strict"] and not res.verdict.passed:
        return EXIT_VERDICT
    return EXIT_OK


def cmd_verify(o) -> int:
    from . import spectral as sp
    from . import verify as vf

    params, data = _params(o), _data(o)
    suites = [s.strip() for s in str(o["suite"]).split(",") if s.strip()]
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown suite(s) {sorted(unknown)}")
    checks = []
    if "frames" in suites:
        checks.append(vf.check_frames(params, data))
    if "first-bounds" in suites:
        checks.append(vf.check_first_bounds(params, data))
    if "envelope" in suites:
        checks.append(vf.check_envelope(params, data))
    if "decay" in suites:
        checks.extend(vf.decay_checks(sp.TorusGrid(int(o["dim"]), int(o["modes"])), seed=int(o["seed"])))
    if "gn" in suites:
        checks.extend(vf.gn_checks(seed=int(o["seed"])))
    if "linear" in suites:
        checks.extend(vf.linear_checks(seed=int(o["seed"])))
    for c in checks:
        print(c.line())
    _write(o["out"], "verify.json", json.dumps(
        [{"name": c.name, "passed": c.passed, "value": c.value, "detail": c.detail} for c in checks],
        sort_keys=True, indent=2) + "\n")
    if o["strict"] and not all(c.passed for c in checks):
        return EXIT_VERDICT
    return EXIT_OK


def cmd_emit_plots(o) -> int:
    if not o["out"]:
        raise ConfigError("emit-plots needs --out pointing at a sweep output directory")
    path = os.path.join(str(o["out"]), "sweep.json")
    try:
        res = load_result(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    _write(o["out"], "plot_data.csv", plot_data(res))
    _write(o["out"], "sweep.svg", render_svg(res))
    print(f"wrote plot_data.csv and sweep.svg to {o['out']}")
    return EXIT_OK


HANDLERS = {
    "theory": cmd_theory, "ode": cmd_ode, "pde": cmd_pde, "sweep": cmd_sweep,
    "verify": cmd_verify, "emit-plots": cmd_emit_plots,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        opts = resolve(args)
        return HANDLERS[args.command](opts)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
