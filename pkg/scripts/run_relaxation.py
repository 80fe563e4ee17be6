"""Cool an equilibrated SGD ensemble from eta_A to eta_B and fit the approach to equilibrium."""
import argparse

from ntl.sim import EnsembleConfig, relaxation_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--eta-a", type=float, default=0.2)
    p.add_argument("--eta-b", type=float, default=0.1)
    p.add_argument("--sigma-g", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--particles", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    fit = relaxation_experiment(args.a, args.eta_a, args.eta_b, args.sigma_g, args.steps,
                                EnsembleConfig(n_particles=args.particles, seed=args.seed))
    print(f"rate      {fit.rate:.4f}  (flat {fit.predicted_rate:.4f}, discrete {fit.exact_rate:.4f})")
    print(f"asymptote {fit.asymptote:.5f}  (flat {fit.predicted_asymptote:.5f}, discrete {fit.exact_asymptote:.5f})")
    print(f"min margin above floor: {fit.min_margin_se:.1f} SE")


if __name__ == "__main__":
    main()
