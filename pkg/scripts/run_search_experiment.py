"""Search with both strategies over several seeds and compare each result to the fixed baseline.

    python scripts/run_search_experiment.py --config configs/search.yaml --seeds 0 1 2 --out runs/experiment

Writes one search directory per (strategy, seed) plus summary.csv.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from hpsdet.cli import EXIT_OK, compare, main as cli_main, read_history
from hpsdet.config import load_config
from hpsdet.hpspace import from_string, to_string


def late_gain_fraction(best):
    total = best[-1] - best[0]
    if total <= 0:
        return 0.0
    return float((best[-1] - best[int(round(0.8 * len(best))) - 1]) / total)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/search.yaml")
    ap.add_argument("--strategies", nargs="+", default=["dycors", "srbf"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/experiment")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    base, _ = compare(cfg.benchmark, "baseline", cfg.eval_seeds)
    base_med = float(np.median(base))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for strategy in args.strategies:
        for seed in args.seeds:
            d = out / f"{strategy}_seed{seed}"
            status = cli_main(["search", "--config", args.config, "--strategy", strategy,
                               "--seed", str(seed), "--out", str(d)])
            if status != EXIT_OK:
                print(f"{strategy} seed {seed}: search exited {status}", file=sys.stderr)
                return status
            best = np.array([float(r["best_ap"]) for r in read_history(d / "history.csv")])
            s = from_string((d / "best_hp.txt").read_text(), cfg.hp)
            _, cand = compare(cfg.benchmark, s, cfg.eval_seeds)
            rows.append((strategy, seed, to_string(s), repr(best[-1]), repr(float(np.median(cand))),
                         repr(base_med), repr(late_gain_fraction(best))))
            print(f"{strategy} seed {seed}: S={to_string(s)} val AP {best[-1]:.4f} "
                  f"eval median {np.median(cand):.4f} (baseline {base_med:.4f})")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("strategy", "seed", "hp_vector", "search_best_ap", "eval_median_ap", "baseline_median_ap",
                    "late_gain_fraction"))
        w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
