"""Evaluate uniform top-k vectors against the fixed baseline over several benchmark seeds.

Useful for calibrating a benchmark: a good one shows a clear peak at small k.

    python scripts/sweep_uniform_k.py --config configs/search.yaml --k 1 2 3 5 8 --seeds 0 1 2
"""

import argparse
import sys

import numpy as np

from hpsdet.cli import compare
from hpsdet.config import load_config
from hpsdet.hpspace import HpVector


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/search.yaml")
    ap.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 5, 8])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    base, _ = compare(cfg.benchmark, "baseline", args.seeds)
    print(f"baseline      mean {np.mean(base):.4f}  " + " ".join(f"{v:.3f}" for v in base))
    for k in args.k:
        s = HpVector((k,) * cfg.hp.dim, cfg.hp)
        _, cand = compare(cfg.benchmark, s, args.seeds)
        print(f"k={k:<3}         mean {np.mean(cand):.4f}  " + " ".join(f"{v:.3f}" for v in cand))
    return 0


if __name__ == "__main__":
    sys.exit(main())
