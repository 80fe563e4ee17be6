"""Per-decade final loss of the 1/t decay on a log-uniform sharpness spectrum."""
import argparse

from ntl.sweep import anisotropic_decay


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--th", type=float, nargs="+", default=[10, 100, 1000])
    p.add_argument("--particles", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    res = anisotropic_decay(th_list=args.th, particles=args.particles, seed=args.seed)
    edges = res.bin_edges
    print("t_h    " + "  ".join(f"[{edges[j]:g},{edges[j + 1]:g})" for j in range(len(edges) - 1)))
    for k, th in enumerate(res.t_h):
        cells = "  ".join(f"{m:.3g}/{q:.3g}" for m, q in zip(res.bin_loss[k], res.bin_predicted[k]))
        print(f"{th:<6g} {cells}")
    print("measured/predicted per direction; spread over large-a bins:", res.equipartition_spread.round(3).tolist())


if __name__ == "__main__":
    main()
