"""Search on one scene distribution and evaluate the result on another.

    python scripts/run_transfer.py --source configs/transfer_a.yaml --target configs/transfer_b.yaml
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from hpsdet.cli import EXIT_OK, compare, main as cli_main
from hpsdet.config import load_config
from hpsdet.hpspace import from_string, to_string


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", default="configs/transfer_a.yaml")
    ap.add_argument("--target", default="configs/transfer_b.yaml")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/transfer")
    args = ap.parse_args(argv)

    out = Path(args.out)
    status = cli_main(["search", "--config", args.source, "--seed", str(args.seed), "--out", str(out)])
    if status != EXIT_OK:
        return status
    target = load_config(args.target)
    s = from_string((out / "best_hp.txt").read_text(), target.hp)
    for label, cfg in (("source", load_config(args.source)), ("target", target)):
        base, cand = compare(cfg.benchmark, s, cfg.eval_seeds)
        print(f"{label}: S={to_string(s)} median AP {np.median(cand):.4f} vs baseline {np.median(base):.4f} "
              f"over {len(cfg.eval_seeds)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
