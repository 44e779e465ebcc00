"""Command-line entry point: ``hpsdet {search,compare,gen-scenes,replay}``.

Exit statuses: 0 success, 1 replay mismatch, 2 bad config / input or
dimension mismatch, 3 resumed checkpoint does not match the config,
130 interrupted (checkpoint written).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from hpsdet import InvalidInput
from hpsdet.config import ConfigError, RunConfig, benchmark_digest, dump_config, load_config
from hpsdet.hpspace import CONFIG_NAMES, HpVector, from_string, to_string
from hpsdet.simdet import BASELINE, Benchmark, benchmark_scenes, objective, train, training_assignment
from hpsdet.surrogate import STRATEGIES, SearchInterrupted, SearchState, new_state, run

EXIT_OK = 0
EXIT_REPLAY_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_RESUME = 3
EXIT_INTERRUPTED = 130

HISTORY = "history.csv"
BEST = "best_hp.txt"
CHECKPOINT = "checkpoint.state"
COMPARE = "compare.csv"
RUN_CONFIG = "run_config.yaml"
HISTORY_HEADER = ("iteration", "ap", "best_ap", "hp_vector")

log = logging.getLogger("hpsdet")


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def threads_from_env() -> int:
    raw = os.environ.get("HPS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"HPS_THREADS must be a positive integer, got {raw!r}", EXIT_CONFIG) from None
    if n < 1:
        raise CliError(f"HPS_THREADS must be a positive integer, got {raw!r}", EXIT_CONFIG)
    return n


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("seed", "budget", "strategy", "hp_config", "mode", "out",
                                                     "resume")}
    try:
        return load_config(args.config, overrides)
    except InvalidInput as e:
        raise CliError(str(e), EXIT_CONFIG) from None


def search_meta(cfg: RunConfig) -> dict:
    return {"benchmark": benchmark_digest(cfg.benchmark), "hp_config": cfg.hp_config, "mode": cfg.mode,
            "strategy": cfg.strategy, "budget": cfg.budget, "seed": cfg.seed}


def _csv_line(row) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(row)
    return buf.getvalue()


class HistoryWriter:
    """Single writer for history.csv; rewritten from state on (re)start, then appended."""

    def __init__(self, path: Path, state: SearchState):
        self.path = path
        self.best = -np.inf
        with open(path, "w", newline="") as fh:
            fh.write(_csv_line(HISTORY_HEADER))
            for r in state.history:
                fh.write(self._row(r))

    def _row(self, r) -> str:
        self.best = max(self.best, r.value)
        return _csv_line((r.iteration + 1, repr(float(r.value)), repr(float(self.best)), to_string(r.point)))

    def __call__(self, rec, state):
        with open(self.path, "a", newline="") as fh:
            fh.write(self._row(rec))


def read_history(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def cmd_search(args) -> int:
    cfg = _config(args)
    threads = threads_from_env()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = search_meta(cfg)
    if cfg.resume:
        try:
            state = SearchState.from_json(Path(cfg.resume).read_text())
        except (OSError, ValueError, KeyError) as e:
            raise CliError(f"cannot read checkpoint {cfg.resume}: {e}", EXIT_CONFIG) from None
        if state.meta != meta:
            diff = sorted(k for k in meta if state.meta.get(k) != meta[k])
            raise CliError(f"checkpoint {cfg.resume} was written for a different config (differs in {diff})",
                           EXIT_RESUME)
    else:
        try:
            state = new_state(cfg.hp, cfg.budget, cfg.strategy, cfg.seed)
        except InvalidInput as e:
            raise CliError(str(e), EXIT_CONFIG) from None
        state.meta = meta
    (out / RUN_CONFIG).write_text(dump_config(cfg))
    writer = HistoryWriter(out / HISTORY, state)
    bench = cfg.benchmark

    def f(s: HpVector) -> float:
        return objective(s, bench)
    try:
        run(state, f, on_record=writer, checkpoint=out / CHECKPOINT,
            stop_after=getattr(args, "stop_after", None), max_workers=threads)
    except (SearchInterrupted, KeyboardInterrupt):
        print(f"interrupted after {len(state.history)} evaluations; resume with --resume {out / CHECKPOINT}",
              file=sys.stderr)
        return EXIT_INTERRUPTED
    best = state.best
    (out / BEST).write_text(to_string(best.point) + "\n")
    print(f"best AP {best.value:.4f} at S = {to_string(best.point)} ({len(state.history)} evaluations)")
    return EXIT_OK


def _parse_hp(text: str, cfg: RunConfig) -> HpVector | str:
    text = text.strip()
    if text == BASELINE:
        return BASELINE
    try:
        return from_string(text, cfg.hp)
    except InvalidInput as e:
        raise CliError(f"bad hp vector {text!r} for config {cfg.hp_config}: {e}", EXIT_CONFIG) from None


def compare(bench: Benchmark, s: HpVector | str, seeds) -> tuple[list[float], list[float]]:
    """Per-seed APs of the fixed baseline and of ``s`` on fresh benchmark instances."""
    base, cand = [], []
    for seed in seeds:
        b = bench.with_seed(seed)
        ap_base = objective(BASELINE, b)
        base.append(ap_base)
        cand.append(ap_base if s == BASELINE else objective(s, b))
    return base, cand


def cmd_compare(args) -> int:
    cfg = _config(args)
    if (args.hp is None) == (args.hp_file is None):
        raise CliError("give exactly one of --hp or --hp-file", EXIT_CONFIG)
    if args.hp_file is not None:
        try:
            text = Path(args.hp_file).read_text()
        except OSError as e:
            raise CliError(f"cannot read {args.hp_file}: {e}", EXIT_CONFIG) from None
    else:
        text = args.hp
    s = _parse_hp(text, cfg)
    seeds = tuple(args.seeds) if args.seeds else cfg.eval_seeds
    base, cand = compare(cfg.benchmark, s, seeds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    label = s if isinstance(s, str) else to_string(s)
    with open(out / COMPARE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "baseline_ap", "hp_ap", "hp_vector"))
        for sd, a, b in zip(seeds, base, cand):
            w.writerow((sd, repr(float(a)), repr(float(b)), label))
        w.writerow(("median", repr(float(np.median(base))), repr(float(np.median(cand))), label))
    print(f"median AP baseline {np.median(base):.4f}  S={label} {np.median(cand):.4f}  over {len(seeds)} seeds")
    return EXIT_OK


def scenes_text(scenes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scene", "gt_index", "class_id", "x0", "y0", "x1", "y1"))
    for sc in scenes:
        for gi, g in enumerate(sc.gts):
            b = g.box
            w.writerow((sc.index, gi, g.class_id) + tuple(repr(float(v)) for v in (b.x0, b.y0, b.x1, b.y1)))
    return buf.getvalue()


def cmd_gen_scenes(args) -> int:
    cfg = _config(args)
    bench = cfg.benchmark if args.seed is None else cfg.benchmark.with_seed(args.seed)
    try:
        train_sc, val_sc = benchmark_scenes(bench)
    except InvalidInput as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenes_train.csv").write_text(scenes_text(train_sc))
    (out / "scenes_val.csv").write_text(scenes_text(val_sc))
    print(f"wrote {len(train_sc)} train and {len(val_sc)} val scenes to {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    run_dir = Path(args.run)
    cfg_path = args.config or run_dir / RUN_CONFIG
    try:
        cfg = load_config(cfg_path)
    except InvalidInput as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    try:
        rows = read_history(run_dir / HISTORY)
    except OSError as e:
        raise CliError(f"cannot read history: {e}", EXIT_CONFIG) from None
    if args.limit is not None:
        rows = rows[: args.limit]
    bad = 0
    for row in rows:
        s = _parse_hp(row["hp_vector"], cfg)
        ap = repr(float(objective(s, cfg.benchmark)))
        if ap != row["ap"]:
            bad += 1
            print(f"iteration {row['iteration']}: recorded {row['ap']} replayed {ap}")
    if args.dump_assignment is not None:
        s = _parse_hp(args.dump_assignment, cfg)
        bench = cfg.benchmark
        train_sc, _ = benchmark_scenes(bench)
        model = train(train_sc, s, bench.loss, bench.train, bench.train_seed, bench.mode,
                      bench.distribution, bench.candidate_iou)
        adir = run_dir / "assignments"
        adir.mkdir(exist_ok=True)
        for sc in train_sc:
            res = training_assignment(sc, model, s, bench.loss, bench.mode, bench.candidate_iou)
            (adir / f"scene_{sc.index:04d}.csv").write_text(res.to_text())
    print(f"replayed {len(rows)} evaluations, {bad} mismatches")
    return EXIT_REPLAY_MISMATCH if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--hp-config", dest="hp_config", choices=CONFIG_NAMES)
    common.add_argument("--mode", choices=("anchor", "point"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hpsdet", description="Surrogate search over per-cell positive counts.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", parents=[common], help="run the surrogate search")
    s.add_argument("--budget", type=int)
    s.add_argument("--strategy", choices=STRATEGIES)
    s.add_argument("--resume", help="checkpoint.state to continue from")
    s.add_argument("--stop-after", dest="stop_after", type=int, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_search)

    c = sub.add_parser("compare", parents=[common], help="fixed baseline vs a vector over evaluation seeds")
    c.add_argument("--hp", help='comma-separated vector or "baseline"')
    c.add_argument("--hp-file", dest="hp_file", help="file holding a vector, e.g. best_hp.txt")
    c.add_argument("--seeds", type=int, nargs="+", help="evaluation seeds (default: run.eval_seeds)")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gen-scenes", parents=[common], help="dump the benchmark's scenes")
    g.set_defaults(func=cmd_gen_scenes)

    r = sub.add_parser("replay", parents=[common], help="re-evaluate a search history")
    r.add_argument("--run", required=True, help="search output directory")
    r.add_argument("--limit", type=int)
    r.add_argument("--dump-assignment", dest="dump_assignment", metavar="HP",
                   help="also write per-scene training assignments for this vector")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.status
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
