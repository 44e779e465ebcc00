"""Run and benchmark configuration loaded from YAML.

A config file has two top-level sections::

    run:
      hp_config: "3"
      strategy: dycors
      budget: 100
      seed: 0
    benchmark:            # inline mapping, or a path relative to this file
      mode: point
      distribution: {size_range: [24, 160]}

Unknown keys are errors.  CLI flags override file keys, which override the
dataclass defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from hpsdet import InvalidInput
from hpsdet.hpspace import CONFIG_NAMES, make_config
from hpsdet.losses import LossParams
from hpsdet.simdet import Benchmark, SceneDistribution, SignalCoefficients, TrainConfig
from hpsdet.surrogate import STRATEGIES, default_n_init

DEFAULT_EVAL_SEEDS = (1000, 1001, 1002, 1003, 1004)

# nested dataclass fields and the types they build
_NESTED = {
    (Benchmark, "distribution"): SceneDistribution,
    (Benchmark, "train"): TrainConfig,
    (Benchmark, "loss"): LossParams,
    (SceneDistribution, "signal"): SignalCoefficients,
}


class ConfigError(InvalidInput):
    pass


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in data.items():
        sub = _NESTED.get((cls, k))
        if sub is not None:
            kw[k] = _build(sub, v, f"{where}.{k}")
        elif isinstance(v, list):
            kw[k] = tuple(v)
        elif isinstance(v, str) and isinstance(defaults[k], float):
            # YAML 1.1 reads "1e-6" as a string
            try:
                kw[k] = float(v)
            except ValueError:
                raise ConfigError(f"{where}.{k}: not a number: {v!r}") from None
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _as_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = _as_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def benchmark_from_dict(data: Mapping[str, Any] | None) -> Benchmark:
    return _build(Benchmark, data or {}, "benchmark")


def benchmark_to_dict(bench: Benchmark) -> dict:
    return _as_dict(bench)


def benchmark_digest(bench: Benchmark) -> str:
    """Stable fingerprint used to detect resume/config mismatches."""
    text = yaml.safe_dump(benchmark_to_dict(bench), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    benchmark: Benchmark = field(default_factory=Benchmark)
    hp_config: str = "3"
    strategy: str = "dycors"
    budget: int = 100
    seed: int = 0
    out: str = "runs/search"
    resume: str | None = None
    eval_seeds: tuple[int, ...] = DEFAULT_EVAL_SEEDS

    def __post_init__(self):
        if self.hp_config not in CONFIG_NAMES:
            raise ConfigError(f"hp_config must be one of {CONFIG_NAMES}, got {self.hp_config!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        d = self.hp.dim
        if not isinstance(self.budget, int) or self.budget < default_n_init(d) + 1:
            raise ConfigError(f"budget must be >= {default_n_init(d) + 1} for d={d}, got {self.budget}")
        if not self.eval_seeds:
            raise ConfigError("eval_seeds must be nonempty")

    @property
    def mode(self) -> str:
        return self.benchmark.mode

    @property
    def hp(self):
        return make_config(self.hp_config, self.benchmark.mode)


_RUN_KEYS = {"hp_config", "strategy", "budget", "seed", "out", "resume", "eval_seeds"}


def load_config(path: str | os.PathLike | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read ``path`` (may be None for all defaults) and apply non-None ``overrides``.

    Override keys are the RunConfig fields plus ``mode`` (routed to the benchmark).
    """
    doc: dict = {}
    base = Path(".")
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = Path(path).parent
    unknown = sorted(set(doc) - {"run", "benchmark"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    run = dict(doc.get("run") or {})
    bad = sorted(set(run) - _RUN_KEYS)
    if bad:
        raise ConfigError(f"run: unknown keys {bad}")
    bench_doc = doc.get("benchmark") or {}
    if isinstance(bench_doc, str):
        bpath = base / bench_doc
        try:
            bench_doc = yaml.safe_load(bpath.read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot load benchmark {bpath}: {e}") from None
    bench_doc = dict(bench_doc)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "mode":
            bench_doc["mode"] = v
        elif k in _RUN_KEYS:
            run[k] = v
        else:
            raise ConfigError(f"unknown override {k!r}")
    if "hp_config" in run:
        run["hp_config"] = str(run["hp_config"])
    if "eval_seeds" in run:
        run["eval_seeds"] = tuple(run["eval_seeds"])
    try:
        bench = benchmark_from_dict(bench_doc)
    except InvalidInput as e:
        raise ConfigError(str(e)) from None
    try:
        return RunConfig(benchmark=bench, **run)
    except TypeError as e:
        raise ConfigError(f"run: {e}") from None


def dump_config(cfg: RunConfig) -> str:
    run = {"hp_config": cfg.hp_config, "strategy": cfg.strategy, "budget": cfg.budget,
           "seed": cfg.seed, "eval_seeds": list(cfg.eval_seeds)}
    return yaml.safe_dump({"run": run, "benchmark": benchmark_to_dict(cfg.benchmark)}, sort_keys=True)
