"""Positive / negative sample assignment.

:func:`assign_dynamic` picks, for every ground truth, the ``k`` candidates with
the lowest combined loss, where ``k`` is read from the searched vector by the
GT's best pyramid level and aspect-ratio bin.  :func:`assign_fixed_baseline`
reproduces the static IoU-threshold (anchor) and inside-the-box (point) rules
it replaces.

Candidate ids are the stable ``Candidates.ids``; internally everything works
on array positions and translates at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from hpsdet import InvalidInput
from hpsdet.geometry import (ANCHOR, POINT, Candidates, GroundTruth, aspect_ratio, best_level,
                             iou_matrix, ltrb_offsets)
from hpsdet.hpspace import HpVector, lookup_k
from hpsdet.losses import LossParams, combined_loss

CANDIDATE_IOU_THRESHOLD = 0.1
POS_IOU = 0.5
NEG_IOU = 0.4


@dataclass
class AssignmentResult:
    positives: dict[int, tuple[int, float]]
    negatives: frozenset[int]
    ignored: frozenset[int] = field(default_factory=frozenset)

    @property
    def is_partition(self) -> bool:
        """False only for baselines that leave some candidates ignored."""
        return not self.ignored

    def positive_pairs(self) -> set[tuple[int, int]]:
        return {(cid, g) for cid, (g, _) in self.positives.items()}

    def counts_per_gt(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for g, _ in self.positives.values():
            out[g] = out.get(g, 0) + 1
        return out

    def to_text(self) -> str:
        lines = ["candidate_id,gt_index,combined_loss"]
        for cid in sorted(self.positives):
            g, loss = self.positives[cid]
            lines.append(f"{cid},{g},{loss!r}")
        for cid in sorted(self.ignored):
            lines.append(f"{cid},-1,nan")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, candidate_ids: Sequence[int]) -> "AssignmentResult":
        positives, ignored = {}, set()
        for line in text.strip().splitlines()[1:]:
            cid, g, loss = line.split(",")
            if int(g) < 0:
                ignored.add(int(cid))
            else:
                positives[int(cid)] = (int(g), float(loss))
        negatives = frozenset(int(c) for c in candidate_ids) - set(positives) - ignored
        return cls(positives, negatives, frozenset(ignored))


@dataclass(frozen=True)
class GtPlan:
    """Static per-GT assignment inputs: candidate positions, best level, ratio."""
    positions: np.ndarray
    level: int
    ratio: float


def _in_range(candidates: Candidates, maxoff: np.ndarray) -> np.ndarray:
    lo, hi = candidates.range_lo, candidates.range_hi
    return ((maxoff > lo) | ((lo == 0) & (maxoff >= 0))) & (maxoff <= hi)


def _candidate_positions(g: GroundTruth, candidates: Candidates, mode: str,
                         iou_threshold: float = CANDIDATE_IOU_THRESHOLD) -> np.ndarray:
    box = g.box.as_array()
    if mode == ANCHOR:
        ious = iou_matrix(candidates.boxes, box[None])[:, 0]
        pos = np.flatnonzero(ious > iou_threshold)
        if len(pos) == 0:
            best = ious.max()
            pos = np.flatnonzero(ious == best)
            pos = pos[np.argmin(candidates.ids[pos])][None]
        return pos
    offs = ltrb_offsets(candidates.centers, box)
    inside = offs.min(axis=1) > 0
    pos = np.flatnonzero(inside & _in_range(candidates, offs.max(axis=1)))
    if len(pos) == 0:
        # nothing qualifies: nearest point to the GT centre on its best level
        lv = best_level(g, candidates, POINT)
        at = np.flatnonzero(candidates.level == lv)
        cx, cy = g.box.center
        d = np.hypot(candidates.centers[at, 0] - cx, candidates.centers[at, 1] - cy)
        near = at[d == d.min()]
        pos = near[np.argmin(candidates.ids[near])][None]
    return pos


def build_candidate_set(g: GroundTruth, candidates: Candidates, mode: str | None = None,
                        iou_threshold: float = CANDIDATE_IOU_THRESHOLD) -> list[int]:
    """Ids of the candidates eligible as positives for ``g`` (ascending)."""
    mode = mode or candidates.kind
    pos = _candidate_positions(g, candidates, mode, iou_threshold)
    return sorted(int(i) for i in candidates.ids[pos])


def plan_scene(gts: Sequence[GroundTruth], candidates: Candidates, mode: str | None = None,
               iou_threshold: float = CANDIDATE_IOU_THRESHOLD) -> list[GtPlan]:
    """Precompute everything about a scene's assignment that does not depend on losses."""
    mode = mode or candidates.kind
    return [GtPlan(_candidate_positions(g, candidates, mode, iou_threshold),
                   best_level(g, candidates, mode), aspect_ratio(g)) for g in gts]


def rank_by_combined_loss(cands: Sequence[int], losses, params: LossParams = LossParams()) -> list[int]:
    """Sort ids ascending by combined loss, ties by id.

    ``losses[cid]`` must give ``(l_cls, l_reg)``.
    """
    cands = list(cands)
    comb = []
    for cid in cands:
        try:
            l_cls, l_reg = losses[cid]
        except (KeyError, IndexError):
            raise InvalidInput(f"no loss entry for candidate {cid}") from None
        comb.append(combined_loss(l_cls, l_reg, params))
    order = np.lexsort((np.asarray(cands), np.asarray(comb, dtype=float)))
    return [cands[i] for i in order]


def top_k(sorted_ids: Sequence[int], k: int) -> list[int]:
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    return list(sorted_ids[:k])


LossSource = Callable[[int, np.ndarray], tuple[np.ndarray, np.ndarray]] | Mapping


def _losses_for(losses: LossSource, gt_index: int, ids: np.ndarray):
    if callable(losses):
        l_cls, l_reg = losses(gt_index, ids)
        return np.asarray(l_cls, dtype=float), np.asarray(l_reg, dtype=float)
    try:
        pairs = [losses[(int(c), gt_index)] for c in ids]
    except KeyError as e:
        raise InvalidInput(f"missing loss entry {e.args[0]}") from None
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def assign_dynamic(scene, losses: LossSource, s: HpVector, mode: str | None = None,
                   params: LossParams = LossParams(), plan: list[GtPlan] | None = None,
                   iou_threshold: float = CANDIDATE_IOU_THRESHOLD) -> AssignmentResult:
    """Top-k lowest-combined-loss positives per GT.

    ``losses`` is either a callable ``(gt_index, candidate_ids) -> (l_cls, l_reg)``
    or a mapping ``(candidate_id, gt_index) -> (l_cls, l_reg)``.  A candidate
    claimed by several GTs goes to the one where its combined loss is lowest
    (ties to the lower GT index); the losing GT is not backfilled.
    """
    cands: Candidates = scene.candidates
    mode = mode or cands.kind
    if plan is None:
        plan = plan_scene(scene.gts, cands, mode, iou_threshold)
    ids = cands.ids
    best: dict[int, tuple[float, int]] = {}
    for gi, gp in enumerate(plan):
        cid = ids[gp.positions]
        l_cls, l_reg = _losses_for(losses, gi, cid)
        comb = l_cls + params.mix_alpha * l_reg
        k = lookup_k(s, gp.level, gp.ratio)
        order = np.lexsort((cid, comb))[:k]
        for j in order:
            c, l = int(cid[j]), float(comb[j])
            cur = best.get(c)
            if cur is None or (l, gi) < cur:
                best[c] = (l, gi)
    positives = {c: (g, l) for c, (l, g) in best.items()}
    negatives = frozenset(int(c) for c in ids) - set(positives)
    return AssignmentResult(positives, negatives)


def assign_fixed_baseline(scene, mode: str | None = None, plan: list[GtPlan] | None = None,
                          pos_iou: float = POS_IOU, neg_iou: float = NEG_IOU,
                          iou_threshold: float = CANDIDATE_IOU_THRESHOLD) -> AssignmentResult:
    """Static assignment of the detectors the dynamic scheme replaces.

    Anchor mode: IoU >= ``pos_iou`` with the best GT is positive, below
    ``neg_iou`` negative, anything between is ignored.  Point mode: every point
    of every GT's candidate set is positive; overlaps go to the smaller GT.
    """
    cands: Candidates = scene.candidates
    mode = mode or cands.kind
    ids = cands.ids
    gts = scene.gts
    if not gts:
        return AssignmentResult({}, frozenset(int(c) for c in ids))
    if mode == ANCHOR:
        gt_boxes = np.array([g.box.as_array() for g in gts])
        ious = iou_matrix(cands.boxes, gt_boxes)
        best_gt = ious.argmax(axis=1)
        best_iou = ious[np.arange(len(ids)), best_gt]
        positives = {int(ids[i]): (int(best_gt[i]), math.nan) for i in np.flatnonzero(best_iou >= pos_iou)}
        ignored = frozenset(int(ids[i]) for i in np.flatnonzero((best_iou >= neg_iou) & (best_iou < pos_iou)))
        negatives = frozenset(int(ids[i]) for i in np.flatnonzero(best_iou < neg_iou))
        return AssignmentResult(positives, negatives, ignored)

    if plan is None:
        plan = plan_scene(gts, cands, mode, iou_threshold)
    owner: dict[int, tuple[float, int]] = {}
    for gi, gp in enumerate(plan):
        area = gts[gi].box.area
        for p in gp.positions:
            c = int(ids[p])
            cur = owner.get(c)
            if cur is None or (area, gi) < cur:
                owner[c] = (area, gi)
    positives = {c: (g, math.nan) for c, (_, g) in owner.items()}
    return AssignmentResult(positives, frozenset(int(c) for c in ids) - set(positives))
