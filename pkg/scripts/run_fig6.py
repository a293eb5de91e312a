"""Spread of u(q3) under static-target pull training vs dynamic-target tangent training.

    python scripts/run_fig6.py --seeds 0 1 2 3 4
"""

import argparse

from udfrecon.training import oscillation_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--iterations", type=int, default=2000)
    args = ap.parse_args()
    print("seed std_pull std_tangent ratio")
    for seed in args.seeds:
        r = oscillation_demo(seed=seed, iterations=args.iterations)
        print(seed, f"{r['std_pull']:.3e}", f"{r['std_tangent']:.3e}",
              f"{r['std_pull'] / max(r['std_tangent'], 1e-300):.1f}", flush=True)


if __name__ == "__main__":
    main()
