"""Signed pull baseline on semi-sphere shells of increasing thickness (radius 25 mm).

    python scripts/run_fig3.py --thickness 0.5 1.0 1.5 2.0 --out runs/fig3
"""

import argparse
from pathlib import Path

from udfrecon.experiments import FIG3_THICKNESSES_MM, fig3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--thickness", type=float, nargs="+", default=list(FIG3_THICKNESSES_MM))
    ap.add_argument("--out", type=Path, default=Path("runs/fig3"))
    args = ap.parse_args()
    print("shape cd_bidirectional hole_edges boundary_edges")
    for r in fig3(seed=args.seed, out_dir=args.out, thicknesses=tuple(args.thickness))["runs"]:
        a = r["artifacts"]
        print(r["shape"], f"{r['distances']['cd_bidirectional']:.4f}", a["hole_boundary_edges"],
              a["boundary_edges"], flush=True)


if __name__ == "__main__":
    main()
