"""Run the four exponent sweeps and write CSV/JSON/SVG for each.

    python scripts/acceptance_sweeps.py --out runs --jobs 8
"""
import argparse
import os
import time

from lifespan_lab.sweep import SweepConfig, emit, run_sweep

CASES = {
    "kg_r1": SweepConfig(b=2.0, m2=0.75, p=2, q=2, constants=(0, 0, 0, 1)),
    "kg_r0": SweepConfig(b=2.0, m2=0.75, p=1.3, q=2, constants=(0, 0, 1, 0)),
    "massless_r1": SweepConfig(b=2.0, m2=0.0, p=2, q=2, constants=(0, 0, 0, 1)),
    "massless_r0": SweepConfig(b=2.0, m2=0.0, p=2, q=2, constants=(0, 0, 1, 0)),
    "massless_r0_u_data": SweepConfig(b=2.0, m2=0.0, p=2, q=2, constants=(1, 0, 1, 0)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--jobs", type=int, default=os.cpu_count())
    ap.add_argument("--only", nargs="*", choices=sorted(CASES))
    args = ap.parse_args()
    for name in args.only or CASES:
        t0 = time.perf_counter()
        res = run_sweep(CASES[name], jobs=args.jobs)
        emit(res, os.path.join(args.out, name), ["csv", "json", "svg"])
        v = res.verdict
        slope = "none" if res.fit is None else f"{res.fit.slope:.4f}"
        band = "[" + ", ".join("-" if x is None else f"{x:.4g}" for x in (v.lower, v.upper)) + "]"
        print(f"{name:20s} slope {slope}  theory {band}  verdict {v.status}  ({time.perf_counter() - t0:.1f}s)")
        for note in v.caveats + res.flags:
            print(f"{'':20s} note: {note}")


if __name__ == "__main__":
    main()
