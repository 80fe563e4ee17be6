"""Optimal 1/t decay against cosine, linear and 1-sqrt baselines from one equilibrated state."""
import argparse

from ntl.sweep import IsotropicSetup, default_shootout_schedules, schedule_shootout


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--particles", type=int, default=8)
    p.add_argument("--decay-steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    setup = IsotropicSetup(n=args.n, particles=args.particles, decay_steps=args.decay_steps)
    rows = schedule_shootout(default_shootout_schedules(setup), setup, args.seed)
    for r in sorted(rows, key=lambda r: r.final_loss):
        print(f"{r.name:18s} loss/n={r.final_loss / setup.n:.5g}  se={r.se / setup.n:.2g}  D={r.lr_sum:.4g}")


if __name__ == "__main__":
    main()
