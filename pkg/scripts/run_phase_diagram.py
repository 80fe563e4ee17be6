"""Final loss of the 1/t decay over the (b, t_h) grid on the isotropic quadratic."""
import argparse

import numpy as np

from ntl.sweep import DEFAULT_B_AXIS, DEFAULT_TH_AXIS, IsotropicSetup, phase_diagram


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    setup = IsotropicSetup(n=args.n)
    pd = phase_diagram(DEFAULT_B_AXIS.values(), DEFAULT_TH_AXIS.values(), setup, args.seeds, args.workers)
    for seed, arg in zip(pd.seeds, pd.argmin):
        print(f"seed {seed}: argmin b={arg[0]:.3g} t_h={arg[1]:.3g}")
    print(f"range along t_h (b=0.5): {pd.normalized_range(pd.slice_th(0.5)):.3f}")
    print(f"range along b (t_h=10):  {pd.normalized_range(pd.slice_b(10.0)):.3f}")
    np.set_printoptions(precision=3, linewidth=160)
    print(pd.mean_loss() / setup.n)


if __name__ == "__main__":
    main()
