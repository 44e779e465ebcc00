"""COCO-style mAP (101-point, IoU 0.50:0.95) and VOC-style MAP@0.5 (area under the curve)."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from hpsdet import InvalidInput
from hpsdet.geometry import Box, GroundTruth, iou_matrix

COCO_IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    score: float
    scene_id: int = 0

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInput("detection score must be finite")


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float,
                     gt_filter: Sequence[bool] | None = None) -> np.ndarray:
    """TP flags (input order) for one class in one scene.

    Detections are visited by descending score (stable on insertion order);
    each takes the still-unmatched GT with the highest IoU >= ``iou_thr``.
    ``gt_filter`` marks GTs that take part in matching (area-range hook).
    """
    if not dets:
        return np.zeros(0, dtype=bool)
    d = np.array([x.box.as_array() for x in dets])
    g = np.array([x.box.as_array() for x in gts]).reshape(-1, 4)
    scores = np.array([x.score for x in dets])
    return _match(d, scores, g, iou_thr, gt_filter)


def _match(d: np.ndarray, scores: np.ndarray, g: np.ndarray, iou_thr: float,
           gt_filter: Sequence[bool] | None = None) -> np.ndarray:
    flags = np.zeros(len(d), dtype=bool)
    if len(g) == 0 or len(d) == 0:
        return flags
    ious = iou_matrix(d, g)
    taken = np.zeros(len(g), dtype=bool)
    if gt_filter is not None:
        taken |= ~np.asarray(gt_filter, dtype=bool)
    for i in np.argsort(-scores, kind="stable"):
        row = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thr:
            taken[j] = True
            flags[i] = True
    return flags


def _pr_curve(flags, scores, n_gt):
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    tp = np.asarray(flags, dtype=float)[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(float).eps)
    return recall, precision


def average_precision(flags, scores, n_gt: int, method: str = "coco") -> float:
    """AP from TP flags and scores; ``nan`` when there is no GT (class skipped).

    ``method="coco"`` is the 101-point interpolation; ``"auc"`` integrates the
    precision envelope over every recall change.
    """
    flags = np.asarray(flags)
    scores = np.asarray(scores)
    if flags.shape != scores.shape:
        raise InvalidInput("flags and scores must have equal length")
    if n_gt < 0:
        raise InvalidInput("n_gt must be >= 0")
    if n_gt == 0:
        return math.nan
    if len(flags) == 0:
        return 0.0
    recall, precision = _pr_curve(flags, scores, n_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if method == "coco":
        idx = np.searchsorted(recall, RECALL_POINTS, side="left")
        q = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
        return float(q.mean())
    if method == "auc":
        r = np.concatenate([[0.0], recall])
        return float(np.sum((r[1:] - r[:-1]) * envelope))
    raise InvalidInput(f"unknown AP method {method!r}")


def _group(dets: Sequence[Detection], gts: Mapping[int, Sequence[GroundTruth]]):
    """Arrays per (class, scene) for the evaluators."""
    classes = sorted({g.class_id for gl in gts.values() for g in gl})
    by_key_g: dict[tuple[int, int], list] = {}
    for sid, gl in gts.items():
        for g in gl:
            by_key_g.setdefault((g.class_id, sid), []).append(g.box.as_array())
    by_key_d: dict[tuple[int, int], list] = {}
    for x in dets:
        by_key_d.setdefault((x.class_id, x.scene_id), []).append((x.box.as_array(), x.score))
    return classes, by_key_g, by_key_d


def per_class_ap(dets: Sequence[Detection], gts: Mapping[int, Sequence[GroundTruth]],
                 thresholds=COCO_IOU_THRESHOLDS, method: str = "coco") -> dict[tuple[int, float], float]:
    """AP for every (class present in GT, IoU threshold)."""
    classes, by_g, by_d = _group(dets, gts)
    out = {}
    for c in classes:
        n_gt = sum(len(v) for (cc, _), v in by_g.items() if cc == c)
        scenes = sorted({s for (cc, s) in by_d if cc == c})
        for thr in thresholds:
            flags, scores = [], []
            for s in scenes:
                dl = by_d[(c, s)]
                db = np.array([b for b, _ in dl])
                ds = np.array([sc for _, sc in dl])
                gb = np.array(by_g.get((c, s), [])).reshape(-1, 4)
                flags.append(_match(db, ds, gb, thr))
                scores.append(ds)
            f = np.concatenate(flags) if flags else np.zeros(0, dtype=bool)
            sc = np.concatenate(scores) if scores else np.zeros(0)
            out[(c, float(thr))] = average_precision(f, sc, n_gt, method)
    return out


def coco_map(dets: Sequence[Detection], gts: Mapping[int, Sequence[GroundTruth]]) -> float:
    aps = per_class_ap(dets, gts)
    vals = [v for v in aps.values() if not math.isnan(v)]
    return float(np.mean(vals)) if vals else 0.0


def map_at_50(dets: Sequence[Detection], gts: Mapping[int, Sequence[GroundTruth]]) -> float:
    aps = per_class_ap(dets, gts, thresholds=(0.5,), method="auc")
    vals = [v for v in aps.values() if not math.isnan(v)]
    return float(np.mean(vals)) if vals else 0.0


def report_csv(dets: Sequence[Detection], gts: Mapping[int, Sequence[GroundTruth]]) -> str:
    """``class_id,iou_thr,ap`` rows plus ``all`` summary rows for both metrics."""
    buf = io.StringIO()
    buf.write("class_id,iou_thr,ap\n")
    for (c, thr), ap in sorted(per_class_ap(dets, gts).items()):
        buf.write(f"{c},{thr:.2f},{ap!r}\n")
    buf.write(f"all,0.50:0.95,{coco_map(dets, gts)!r}\n")
    buf.write(f"all,0.50,{map_at_50(dets, gts)!r}\n")
    return buf.getvalue()
