"""Boxes, IoU, candidate grids over pyramid levels and best-level matching.

Scalar helpers (:func:`iou`, :func:`max_regression_offset`) operate on
:class:`Box` objects; the vectorised helpers (:func:`iou_matrix`,
:func:`ltrb_offsets`) work on ``(n, 4)`` arrays in ``x0, y0, x1, y1`` order and
are what the trainer uses in its inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from hpsdet import InvalidInput

ANCHOR = "anchor"
POINT = "point"
MODES = (ANCHOR, POINT)

DEFAULT_STRIDES = (8, 16, 32, 64, 128)
DEFAULT_RATIOS = (0.5, 1.0, 2.0)
# FCOS split; the last range is open.
DEFAULT_REGRESS_RANGES = ((0.0, 64.0), (64.0, 128.0), (128.0, 256.0), (256.0, 512.0), (512.0, math.inf))


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInput(f"non-finite box {vals}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidInput(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=float)


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    class_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise InvalidInput(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class LevelSpec:
    level_index: int
    stride: int
    anchor_size: float
    regress_range: tuple[float, float]

    def contains_offset(self, offset: float) -> bool:
        lo, hi = self.regress_range
        # first range is closed at 0, all others are (lo, hi]
        return (lo < offset or (lo == 0.0 and offset >= 0.0)) and offset <= hi


def default_levels(strides: Sequence[int] = DEFAULT_STRIDES,
                   regress_ranges: Sequence[tuple[float, float]] | None = None,
                   anchor_scale: float = 4.0) -> list[LevelSpec]:
    """Level specs for ``strides``; anchor size is ``anchor_scale * stride``."""
    if regress_ranges is None:
        regress_ranges = DEFAULT_REGRESS_RANGES[: len(strides)]
        if len(strides) > 0:
            # whatever the count, the last level must stay open-ended
            regress_ranges = list(regress_ranges[:-1]) + [(regress_ranges[-1][0], math.inf)]
    if len(regress_ranges) != len(strides):
        raise InvalidInput("one regress range per stride required")
    strides = [int(s) for s in strides]
    if any(b <= a for a, b in zip(strides, strides[1:])):
        raise InvalidInput(f"strides must be strictly increasing: {strides}")
    return [LevelSpec(i + 1, s, anchor_scale * s, (float(r[0]), float(r[1])))
            for i, (s, r) in enumerate(zip(strides, regress_ranges))]


def iou(a: Box, b: Box) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` box arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def aspect_ratio(g: GroundTruth | Box) -> float:
    box = g.box if isinstance(g, GroundTruth) else g
    return box.width / box.height


def ltrb_offsets(points: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Distances ``(l, t, r, b)`` from each point to the sides of ``box``.

    Negative entries mean the point lies outside on that side.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    return np.stack([x - box[0], y - box[1], box[2] - x, box[3] - y], axis=1)


def max_regression_offset(p: tuple[float, float], g: GroundTruth | Box) -> float:
    box = g.box if isinstance(g, GroundTruth) else g
    x, y = p
    offs = (x - box.x0, y - box.y0, box.x1 - x, box.y1 - y)
    if min(offs) < 0:
        raise InvalidInput(f"point {p} lies outside {box}")
    return max(offs)


@dataclass(frozen=True)
class Candidate:
    id: int
    level: int
    kind: str
    center: tuple[float, float]
    box: Box | None = None
    feature: np.ndarray | None = field(default=None, compare=False)


class Candidates:
    """Struct-of-arrays container for the dense candidate grid of one image.

    ``boxes`` is ``None`` in point mode.  Iterating yields :class:`Candidate`
    views, which is convenient in tests but far too slow for the trainer.
    """

    def __init__(self, kind: str, levels: Sequence[LevelSpec], level: np.ndarray,
                 centers: np.ndarray, boxes: np.ndarray | None, ids: np.ndarray | None = None):
        self.kind = kind
        self.levels = list(levels)
        self.level = level
        self.centers = centers
        self.boxes = boxes
        self.ids = np.arange(len(level)) if ids is None else np.asarray(ids, dtype=int)
        self.strides = np.array([self.levels[l - 1].stride for l in level], dtype=float) \
            if len(level) else np.zeros(0)
        self.features: np.ndarray | None = None
        rr = np.array([lv.regress_range for lv in self.levels], dtype=float).reshape(-1, 2)
        self.range_lo = rr[level - 1, 0] if len(level) else np.zeros(0)
        self.range_hi = rr[level - 1, 1] if len(level) else np.zeros(0)

    def __len__(self) -> int:
        return len(self.level)

    def __getitem__(self, i: int) -> Candidate:
        box = Box(*self.boxes[i]) if self.boxes is not None else None
        feat = None if self.features is None else self.features[i]
        return Candidate(int(self.ids[i]), int(self.level[i]), self.kind,
                         (float(self.centers[i, 0]), float(self.centers[i, 1])), box, feat)

    def __iter__(self) -> Iterator[Candidate]:
        for i in range(len(self)):
            yield self[i]

    def level_spec(self, level: int) -> LevelSpec:
        return self.levels[level - 1]

    def permuted(self, perm: np.ndarray) -> "Candidates":
        """Same candidates reordered by ``perm``; every candidate keeps its id."""
        out = Candidates(self.kind, self.levels, self.level[perm], self.centers[perm],
                         None if self.boxes is None else self.boxes[perm], self.ids[perm])
        if self.features is not None:
            out.features = self.features[perm]
        return out


def usable_levels(levels: Sequence[LevelSpec], extent: tuple[int, int]) -> list[LevelSpec]:
    """Levels whose stride fits inside the image."""
    w, h = extent
    return [lv for lv in levels if lv.stride <= min(w, h)]


def generate_candidates(levels: Sequence[LevelSpec], image_extent: tuple[int, int],
                        mode: str = POINT, ratios: Sequence[float] = DEFAULT_RATIOS) -> Candidates:
    if not levels:
        raise InvalidInput("empty levels list")
    if mode not in MODES:
        raise InvalidInput(f"unknown mode {mode!r}")
    w, h = image_extent
    kept = usable_levels(levels, image_extent)
    if not kept:
        raise InvalidInput(f"no level stride fits in extent {image_extent}")
    smax = max(lv.stride for lv in kept)
    if w % smax or h % smax:
        raise InvalidInput(f"extent {image_extent} not divisible by stride {smax}")

    lvl, ctr, boxes = [], [], []
    for lv in kept:
        s = lv.stride
        ny, nx = h // s, w // s
        cy, cx = np.meshgrid((np.arange(ny) + 0.5) * s, (np.arange(nx) + 0.5) * s, indexing="ij")
        cells = np.stack([cx.ravel(), cy.ravel()], axis=1)
        if mode == POINT:
            lvl.append(np.full(len(cells), lv.level_index))
            ctr.append(cells)
            continue
        r = np.asarray(ratios, dtype=float)
        aw = lv.anchor_size * np.sqrt(r)
        ah = lv.anchor_size / np.sqrt(r)
        c = np.repeat(cells, len(r), axis=0)
        aw = np.tile(aw, len(cells))
        ah = np.tile(ah, len(cells))
        lvl.append(np.full(len(c), lv.level_index))
        ctr.append(c)
        boxes.append(np.stack([c[:, 0] - aw / 2, c[:, 1] - ah / 2, c[:, 0] + aw / 2, c[:, 1] + ah / 2], axis=1))
    return Candidates(mode, levels, np.concatenate(lvl).astype(int), np.concatenate(ctr),
                      np.concatenate(boxes) if mode == ANCHOR else None)


def level_for_offset(levels: Sequence[LevelSpec], offset: float) -> int:
    """Level whose regress range holds ``offset``; nearest range otherwise."""
    for lv in levels:
        if lv.contains_offset(offset):
            return lv.level_index

    def gap(lv):
        lo, hi = lv.regress_range
        return lo - offset if offset <= lo else offset - hi
    return min(levels, key=lambda lv: (gap(lv), lv.level_index)).level_index


def best_level(g: GroundTruth, candidates: Candidates, mode: str | None = None) -> int:
    if len(candidates) == 0:
        raise InvalidInput("candidates must be nonempty")
    mode = mode or candidates.kind
    if mode == ANCHOR:
        ious = iou_matrix(candidates.boxes, g.box.as_array()[None])[:, 0]
        best = ious.max()
        return int(candidates.level[ious == best].min())
    present = sorted(set(int(l) for l in np.unique(candidates.level)))
    levels = [candidates.level_spec(l) for l in present]
    return level_for_offset(levels, max_regression_offset(g.box.center, g))
