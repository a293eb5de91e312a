"""Ablation on the noisy semi-sphere: loss, target mode and global features.

    python scripts/run_table5.py --seeds 0 1 2 --out runs/table5
"""

import argparse
from collections import defaultdict
from pathlib import Path

import numpy as np

from udfrecon.experiments import table5


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("runs/table5"))
    args = ap.parse_args()
    cds = defaultdict(list)
    for seed in args.seeds:
        for r in table5(seed=seed, out_dir=args.out / f"seed{seed}")["runs"]:
            key = r["mode"] + ("+gfe" if r["use_gfe"] else "")
            cds[key].append(r["distances"]["cd_bidirectional"])
            print(seed, key, f"{cds[key][-1]:.5f}", flush=True)
    print("variant mean_cd_bidirectional")
    for key, v in cds.items():
        print(key, f"{np.mean(v):.5f}")


if __name__ == "__main__":
    main()
