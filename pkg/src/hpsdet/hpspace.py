"""The searched hyper-parameter vector: positives per (pyramid level, aspect-ratio bin).

A config either bins per level (``"3x5"``: five levels x three ratio bins) or
ignores the level entirely (``"3"``: three ratio bins shared by all levels).
Ratio bins are intervals closed on the right, so a boundary value belongs to
the bin on its left.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hpsdet import InvalidInput

# per-mode upper bound for every entry
PER_DIM_MAX = {"anchor": 80, "point": 25, "atss-like": 32}

RATIO_BOUNDARIES = {
    1: (),
    3: (0.5, 2.0),
    5: (0.25, 0.5, 2.0, 4.0),
}

CONFIG_NAMES = ("3x5", "1x5", "5", "3", "1")


@dataclass(frozen=True)
class HpConfig:
    name: str
    bins_per_level: tuple[int, ...] | None  # None => level agnostic
    n_bins: int  # bins in the shared layout (level-agnostic) or per level
    detector_mode: str
    per_dim_max: int

    def __post_init__(self):
        if self.per_dim_max < 1:
            raise InvalidInput("per_dim_max must be >= 1")
        layouts = [self.n_bins] if self.bins_per_level is None else list(self.bins_per_level)
        for k in layouts:
            if k not in RATIO_BOUNDARIES:
                raise InvalidInput(f"no ratio layout with {k} bins")

    @property
    def level_agnostic(self) -> bool:
        return self.bins_per_level is None

    @property
    def n_levels(self) -> int:
        return 0 if self.bins_per_level is None else len(self.bins_per_level)

    @property
    def dim(self) -> int:
        return self.n_bins if self.bins_per_level is None else sum(self.bins_per_level)

    def bins_at(self, level: int) -> int:
        return self.n_bins if self.bins_per_level is None else self.bins_per_level[level - 1]

    def ratio_boundaries(self, level: int = 1) -> tuple[float, ...]:
        return RATIO_BOUNDARIES[self.bins_at(level)]

    def offset(self, level: int) -> int:
        if self.bins_per_level is None:
            return 0
        return sum(self.bins_per_level[: level - 1])

    def flat_index(self, level: int, bin_index: int) -> int:
        self._check_level(level)
        if not 0 <= bin_index < self.bins_at(level):
            raise InvalidInput(f"bin {bin_index} out of range at level {level}")
        return self.offset(level) + bin_index

    def unflatten(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`flat_index`; level is 1 for level-agnostic configs."""
        if not 0 <= index < self.dim:
            raise InvalidInput(f"index {index} out of range")
        if self.bins_per_level is None:
            return 1, index
        for lv, k in enumerate(self.bins_per_level, start=1):
            if index < k:
                return lv, index
            index -= k
        raise AssertionError("unreachable")

    def _check_level(self, level: int):
        if self.bins_per_level is None:
            return
        if not 1 <= level <= len(self.bins_per_level):
            raise InvalidInput(f"level {level} outside 1..{len(self.bins_per_level)}")


def make_config(name: str, mode: str = "point") -> HpConfig:
    """Build one of the named binning layouts ("3x5", "1x5", "5", "3", "1")."""
    if mode not in PER_DIM_MAX:
        raise InvalidInput(f"unknown detector mode {mode!r}")
    if "x" in name:
        k, _, lv = name.partition("x")
        try:
            k, lv = int(k), int(lv)
        except ValueError:
            raise InvalidInput(f"bad config name {name!r}") from None
        return HpConfig(name, (k,) * lv, k, mode, PER_DIM_MAX[mode])
    try:
        k = int(name)
    except ValueError:
        raise InvalidInput(f"bad config name {name!r}") from None
    return HpConfig(name, None, k, mode, PER_DIM_MAX[mode])


def ratio_bin(config: HpConfig, ratio: float, level: int = 1) -> int:
    if not ratio > 0:
        raise InvalidInput(f"aspect ratio must be positive, got {ratio}")
    # bisect_left keeps a boundary value in the left-hand bin
    return bisect.bisect_left(config.ratio_boundaries(level), ratio)


@dataclass(frozen=True)
class HpVector:
    values: tuple[int, ...]
    config: HpConfig

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if len(self.values) != self.config.dim:
            raise InvalidInput(f"expected {self.config.dim} entries, got {len(self.values)}")
        if any(not 1 <= v <= self.config.per_dim_max for v in self.values):
            raise InvalidInput(f"entries must lie in [1, {self.config.per_dim_max}]: {self.values}")

    def __str__(self) -> str:
        return to_string(self)

    @classmethod
    def parse(cls, text: str, config: HpConfig) -> "HpVector":
        return from_string(text, config)


def to_string(s: HpVector) -> str:
    return ",".join(str(v) for v in s.values)


def from_string(text: str, config: HpConfig) -> HpVector:
    parts = [p.strip() for p in text.strip().strip('"').split(",")]
    try:
        vals = tuple(int(p) for p in parts if p)
    except ValueError:
        raise InvalidInput(f"not an integer list: {text!r}") from None
    return HpVector(vals, config)


def lookup_k(s: HpVector, level: int, ratio: float) -> int:
    cfg = s.config
    cfg._check_level(level)
    b = ratio_bin(cfg, ratio, 1 if cfg.level_agnostic else level)
    return s.values[cfg.flat_index(1 if cfg.level_agnostic else level, b)]


def bounds(config: HpConfig) -> list[tuple[int, int]]:
    return [(1, config.per_dim_max)] * config.dim


def round_to_hp(x: Sequence[float], config: HpConfig) -> HpVector:
    x = np.asarray(x, dtype=float).ravel()
    if len(x) != config.dim:
        raise InvalidInput(f"expected {config.dim} values, got {len(x)}")
    r = np.clip(np.floor(x + 0.5), 1, config.per_dim_max)
    return HpVector(tuple(int(v) for v in r), config)


def baseline_equivalent(config: HpConfig) -> HpVector:
    """Every entry at its maximum; with small candidate sets this keeps them all."""
    return HpVector((config.per_dim_max,) * config.dim, config)
