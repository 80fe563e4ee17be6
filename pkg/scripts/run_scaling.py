"""Measured stationary width against eta, a or sigma_g with a log-log slope."""
import argparse

import numpy as np

from ntl.sweep import scaling_regression


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--family", choices=["sgd", "signgd"], default="sgd")
    p.add_argument("--axis", choices=["eta", "a", "sigma_g"], default="eta")
    p.add_argument("--lo", type=float, default=2e-4)
    p.add_argument("--hi", type=float, default=2e-2)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=2e-4)
    p.add_argument("--sigma-g", type=float, default=1.0)
    p.add_argument("--particles", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    grid = np.logspace(np.log10(args.lo), np.log10(args.hi), args.points)
    fit = scaling_regression(args.family, args.axis, grid, a=args.a, eta=args.eta, sigma_g=args.sigma_g,
                             n_particles=args.particles, seed=args.seed, sample_tc=10)
    for v, s, se in zip(fit.values, fit.sigma, fit.sigma_se):
        print(f"{args.axis}={v:.4g}  sigma={s:.6g} +/- {se:.2g}")
    print(f"slope {fit.slope:.4f} +/- {fit.slope_se:.4f}")


if __name__ == "__main__":
    main()
