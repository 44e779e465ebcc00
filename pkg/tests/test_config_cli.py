import csv

import numpy as np
import pytest
import yaml

from hpsdet.cli import (EXIT_CONFIG, EXIT_INTERRUPTED, EXIT_OK, EXIT_REPLAY_MISMATCH, EXIT_RESUME, main,
                        read_history)
from hpsdet.config import (ConfigError, RunConfig, benchmark_digest, benchmark_from_dict, benchmark_to_dict,
                           load_config)
from hpsdet.hpspace import from_string, lookup_k, make_config
from hpsdet.simdet import Benchmark

TINY_BENCH = {"n_train": 3, "n_val": 2, "train": {"steps": 8}}


def write_config(tmp_path, run=None, bench=None, name="cfg.yaml"):
    doc = {"run": {"hp_config": "1", "budget": 8, "seed": 0, "out": str(tmp_path / "out"),
                   "eval_seeds": [7, 8]}, "benchmark": dict(TINY_BENCH)}
    doc["run"].update(run or {})
    doc["benchmark"].update(bench or {})
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


# ----------------------------------------------------------------- config

def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.mode == "point" and cfg.hp_config == "3" and cfg.budget == 100


def test_flag_beats_file_beats_default(tmp_path):
    p = write_config(tmp_path, run={"seed": 4})
    assert load_config(p).seed == 4
    assert load_config(p, {"seed": 9}).seed == 9
    assert load_config(p).strategy == "dycors"
    assert load_config(p, {"strategy": "srbf"}).strategy == "srbf"
    assert load_config(p, {"mode": "anchor"}).mode == "anchor"
    assert load_config(p, {"seed": None}).seed == 4


def test_benchmark_file_reference_is_relative(tmp_path):
    (tmp_path / "b.yaml").write_text(yaml.safe_dump({"n_train": 5}))
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"run": {"budget": 20}, "benchmark": "b.yaml"}))
    assert load_config(p).benchmark.n_train == 5


def test_shipped_configs_load():
    cfg = load_config("configs/search.yaml")
    assert cfg.mode == "point" and cfg.hp_config == "3" and cfg.budget == 100
    a = load_config("configs/transfer_a.yaml").benchmark.distribution.size_range
    b = load_config("configs/transfer_b.yaml").benchmark.distribution.size_range
    assert a[1] <= b[0]


@pytest.mark.parametrize("doc", [
    {"run": {"budgett": 10}},
    {"runs": {}},
    {"benchmark": {"n_trian": 3}},
    {"benchmark": {"train": {"stepz": 3}}},
    {"run": {"hp_config": "4"}},
    {"run": {"strategy": "random"}},
    {"run": {"hp_config": "3", "budget": 8}},
])
def test_invalid_configs_rejected(tmp_path, doc):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(ConfigError):
        load_config(p)


def test_benchmark_dict_round_trip():
    b = Benchmark(n_train=7)
    again = benchmark_from_dict(benchmark_to_dict(b))
    assert again == b
    assert benchmark_digest(again) == benchmark_digest(b)
    assert benchmark_digest(Benchmark(n_train=8)) != benchmark_digest(b)


def test_float_strings_from_yaml_are_coerced():
    b = benchmark_from_dict({"train": {"lr": "1e-1"}})
    assert b.train.lr == 0.1


# -------------------------------------------------------------------- cli

def test_unparseable_config_exits_2(tmp_path, capsys):
    p = tmp_path / "broken.yaml"
    p.write_text("run: [unclosed\n")
    assert main(["search", "--config", str(p)]) == EXIT_CONFIG
    assert "cannot parse" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path):
    p = write_config(tmp_path, run={"wat": 1})
    assert main(["search", "--config", str(p)]) == EXIT_CONFIG


def test_invalid_threads_env_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("HPS_THREADS", "zero")
    assert main(["search", "--config", str(write_config(tmp_path))]) == EXIT_CONFIG
    monkeypatch.setenv("HPS_THREADS", "0")
    assert main(["search", "--config", str(write_config(tmp_path))]) == EXIT_CONFIG


def run_search(tmp_path, out, *extra, cfg=None):
    cfg = cfg or write_config(tmp_path)
    return main(["search", "--config", str(cfg), "--out", str(out), *extra])


def test_search_artifacts(tmp_path):
    out = tmp_path / "a"
    assert run_search(tmp_path, out) == EXIT_OK
    rows = read_history(out / "history.csv")
    assert len(rows) == 8
    assert [int(r["iteration"]) for r in rows] == list(range(1, 9))
    best = [float(r["best_ap"]) for r in rows]
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    assert best == list(np.maximum.accumulate([float(r["ap"]) for r in rows]))
    s = from_string((out / "best_hp.txt").read_text(), make_config("1"))
    assert lookup_k(s, 3, 1.0) >= 1
    assert (out / "checkpoint.state").exists() and (out / "run_config.yaml").exists()


def test_search_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_search(tmp_path, a) == EXIT_OK
    assert run_search(tmp_path, b) == EXIT_OK
    for name in ("history.csv", "best_hp.txt", "checkpoint.state", "run_config.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_interrupt_then_resume_reproduces(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    assert run_search(tmp_path, full) == EXIT_OK
    assert run_search(tmp_path, part, "--stop-after", "5") == EXIT_INTERRUPTED
    assert len(read_history(part / "history.csv")) == 5
    assert run_search(tmp_path, part, "--resume", str(part / "checkpoint.state")) == EXIT_OK
    for name in ("history.csv", "best_hp.txt", "checkpoint.state"):
        assert (full / name).read_bytes() == (part / name).read_bytes(), name


def test_resume_with_different_config_exits_3(tmp_path):
    out = tmp_path / "a"
    assert run_search(tmp_path, out, "--stop-after", "5") == EXIT_INTERRUPTED
    ck = str(out / "checkpoint.state")
    assert run_search(tmp_path, out, "--resume", ck, "--budget", "9") == EXIT_RESUME
    assert run_search(tmp_path, out, "--resume", ck, "--seed", "1") == EXIT_RESUME
    assert run_search(tmp_path, out, "--resume", ck, "--strategy", "srbf") == EXIT_RESUME
    other = write_config(tmp_path, bench={"n_val": 3}, name="other.yaml")
    assert run_search(tmp_path, out, "--resume", ck, cfg=other) == EXIT_RESUME


def test_resume_from_garbage_exits_2(tmp_path):
    junk = tmp_path / "junk.state"
    junk.write_text("not json")
    assert run_search(tmp_path, tmp_path / "a", "--resume", str(junk)) == EXIT_CONFIG


@pytest.mark.slow
def test_full_budget_on_largest_space(tmp_path):
    out = tmp_path / "big"
    cfg = write_config(tmp_path, run={"hp_config": "3x5", "budget": 100}, bench={"n_train": 1, "n_val": 1,
                                                                                  "train": {"steps": 1}})
    assert run_search(tmp_path, out, cfg=cfg) == EXIT_OK
    assert len(read_history(out / "history.csv")) == 100
    from_string((out / "best_hp.txt").read_text(), make_config("3x5"))


def read_compare(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_compare_baseline_against_itself(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(write_config(tmp_path)), "--out", str(out), "--hp", "baseline"]) == 0
    rows = read_compare(out / "compare.csv")
    assert [r["seed"] for r in rows] == ["7", "8", "median"]
    for r in rows:
        assert r["baseline_ap"] == r["hp_ap"]


def test_compare_vector_and_file(tmp_path):
    cfg = str(write_config(tmp_path))
    out = tmp_path / "cmp"
    assert main(["compare", "--config", cfg, "--out", str(out), "--hp", "2", "--seeds", "3"]) == EXIT_OK
    first = (out / "compare.csv").read_bytes()
    hp = tmp_path / "hp.txt"
    hp.write_text("2\n")
    assert main(["compare", "--config", cfg, "--out", str(out), "--hp-file", str(hp), "--seeds", "3"]) == EXIT_OK
    assert (out / "compare.csv").read_bytes() == first


@pytest.mark.parametrize("hp", ["2,3", "0", "x", "1.5"])
def test_compare_bad_vector_exits_2(tmp_path, hp):
    assert main(["compare", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "o"),
                 "--hp", hp]) == EXIT_CONFIG


def test_compare_requires_exactly_one_source(tmp_path):
    assert main(["compare", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_gen_scenes(tmp_path):
    cfg = str(write_config(tmp_path, bench={"distribution": {"gt_count": [2, 2]}}))
    a, b = tmp_path / "g1", tmp_path / "g2"
    assert main(["gen-scenes", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["gen-scenes", "--config", cfg, "--out", str(b)]) == EXIT_OK
    for name in ("scenes_train.csv", "scenes_val.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_compare(a / "scenes_train.csv")
    assert len(rows) == 3 * 2
    for r in rows:
        assert 0 <= float(r["x0"]) < float(r["x1"]) <= 256
        assert 0 <= float(r["y0"]) < float(r["y1"]) <= 256


def test_gen_scenes_invalid_distribution_exits_2(tmp_path):
    cfg = write_config(tmp_path, bench={"distribution": {"gt_count": [3, 1]}})
    assert main(["gen-scenes", "--config", str(cfg), "--out", str(tmp_path / "g")]) == EXIT_CONFIG


def test_replay(tmp_path):
    out = tmp_path / "a"
    assert run_search(tmp_path, out) == EXIT_OK
    assert main(["replay", "--run", str(out), "--limit", "3", "--dump-assignment", "2"]) == EXIT_OK
    dumps = sorted((out / "assignments").iterdir())
    assert len(dumps) == 3
    assert dumps[0].read_text().startswith("candidate_id,gt_index,combined_loss")
    # tamper with one recorded AP
    text = (out / "history.csv").read_text().splitlines()
    fields = text[1].split(",")
    fields[1] = "0.123"
    text[1] = ",".join(fields)
    (out / "history.csv").write_text("\n".join(text) + "\n")
    assert main(["replay", "--run", str(out), "--limit", "2"]) == EXIT_REPLAY_MISMATCH
