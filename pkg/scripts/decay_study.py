"""Linear decay fits: fitted constants on horizons T and 2T, and the KG rate."""
import argparse
import warnings

from lifespan_lab import spectral as sp
from lifespan_lab.model import LAMBDA_INDEX, SystemParams, char_roots
from lifespan_lab.oracle import HomogeneousData


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=float, default=20.0)
    ap.add_argument("--modes", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    grid = sp.TorusGrid(3, args.modes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = sp.make_data(grid, "random-bandlimited", HomogeneousData(1, 1, 1, 1), seed=args.seed)
    cases = [("KG b=3 m2=2", SystemParams(3.0, 2.0, 2, 2, 1.0)), ("KG double root b=2 m2=1", SystemParams(2.0, 1.0, 2, 2, 1.0)),
             ("massless b=2", SystemParams(2.0, 0.0, 2, 2, 1.0))]
    for label, params in cases:
        for which in ("u", "v"):
            for j, k in LAMBDA_INDEX:
                fit = sp.verify_linear_decay(grid, params, data, args.horizon, j, k, which=which)
                rate = "" if fit.fitted_rate is None else f" rate {fit.fitted_rate:.5f}"
                print(f"{label:24s} {which} (j,k)=({j},{k}) C={fit.C:.5g} C2T={fit.C_doubled:.5g} "
                      f"drift {fit.drift:.2e}{rate}")
        if params.m2 > 0:
            print(f"{'':24s} predicted rate k2 = {char_roots(params).k2:.5f}")


if __name__ == "__main__":
    main()
