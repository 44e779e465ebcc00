"""Desk-scale detection objective: synthetic scenes, a linear detector head, AP.

There are no pixels.  Each candidate carries a feature vector that leaks the
geometry a CNN would have to infer, corrupted by seeded noise:

* an overlap indicator (point inside a GT box / anchor IoU above 0.1),
* a scale indicator (offset inside the level's regress range / anchor on the
  GT's best level),
* a quality score (FCOS centerness for points, IoU for anchors),
* per-class indicators,
* log of the ``(l, t, r, b)`` regression targets over the stride, whose noise
  grows as quality drops, so off-centre candidates regress worse boxes,
* a level one-hot and pure-noise distractors.

The classifier is per-class logistic regression and the regressor a linear map
into log offsets.  Which candidates are labelled positive decides which
features the classifier learns to trust, and so the ranking and localisation
quality of the detections that survive NMS.  That is the chain from sample
assignment to AP that the search optimises.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hpsdet import InvalidInput
from hpsdet.assignment import AssignmentResult, GtPlan, assign_dynamic, assign_fixed_baseline, plan_scene
from hpsdet.geometry import (ANCHOR, MODES, POINT, Box, Candidates, GroundTruth, default_levels,
                             generate_candidates, iou_matrix, ltrb_offsets, usable_levels)
from hpsdet.hpspace import HpVector, lookup_k
from hpsdet.losses import LossParams, focal_loss, focal_loss_logit_grad, iou_loss_ltrb
from hpsdet.metrics import Detection, coco_map, map_at_50

SCORE_THRESHOLD = 0.05
NMS_IOU = 0.5
TOP_K_PER_LEVEL = 100
BASELINE = "baseline"
LOG_OFFSET_FLOOR = 0.05


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"training diverged (non-finite loss or weights) at step {step}")
        self.step = step


@dataclass(frozen=True)
class SignalCoefficients:
    """How strongly each piece of geometry leaks into the features."""
    overlap: float = 1.0
    scale: float = 1.0
    quality: float = 1.0
    cls: float = 1.0
    offset_noise: float = 0.02
    edge_gain: float = 15.0


@dataclass(frozen=True)
class SceneDistribution:
    extent: tuple[int, int] = (256, 256)
    gt_count: tuple[int, int] = (1, 4)
    size_range: tuple[float, float] = (24.0, 160.0)  # sqrt(area), log-uniform
    ratio_range: tuple[float, float] = (0.25, 4.0)  # width / height, log-uniform
    n_classes: int = 3
    feature_dim: int = 16
    noise_std: float = 0.15  # 0 disables all feature noise, offsets and distractors included
    min_gap: float = 4.0
    signal: SignalCoefficients = SignalCoefficients()

    def __post_init__(self):
        lo, hi = self.gt_count
        if not 0 <= lo <= hi:
            raise InvalidInput(f"bad gt_count range {self.gt_count}")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise InvalidInput(f"bad size range {self.size_range}")
        if not 0 < self.ratio_range[0] <= self.ratio_range[1]:
            raise InvalidInput(f"bad ratio range {self.ratio_range}")
        if self.noise_std < 0:
            raise InvalidInput("noise_std must be >= 0")
        if self.n_classes < 1:
            raise InvalidInput("need at least one class")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    lr: float = 0.5
    reg_lr: float = 0.05
    batch_size: int = 2
    prior: float = 0.01


@dataclass(frozen=True)
class Benchmark:
    """Everything the objective depends on; hashable so scenes can be cached."""
    distribution: SceneDistribution = SceneDistribution()
    strides: tuple[int, ...] = (16, 32, 64, 128, 256)
    mode: str = POINT
    n_train: int = 40
    n_val: int = 20
    scene_seed: int = 0
    train_seed: int = 0
    train: TrainConfig = TrainConfig()
    loss: LossParams = LossParams()
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    candidate_iou: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInput(f"unknown mode {self.mode!r}")
        if self.n_train < 1 or self.n_val < 1:
            raise InvalidInput("scene counts must be >= 1")
        w, h = self.distribution.extent
        if min(w, h) < max(self.strides):
            raise InvalidInput(f"extent {self.distribution.extent} smaller than max stride {max(self.strides)}")

    def with_seed(self, seed: int) -> "Benchmark":
        """Fresh scenes and training noise for evaluation seed ``seed``."""
        return dataclasses.replace(self, scene_seed=seed, train_seed=seed)

    @property
    def levels(self):
        return default_levels(self.strides)


@dataclass
class Scene:
    gts: list[GroundTruth]
    candidates: Candidates
    seed: int
    index: int = 0
    extent: tuple[int, int] | None = None
    _plans: dict = field(default_factory=dict, repr=False, compare=False)

    def plan(self, mode: str | None = None, iou_threshold: float = 0.1) -> list[GtPlan]:
        mode = mode or self.candidates.kind
        key = (mode, iou_threshold)
        if key not in self._plans:
            self._plans[key] = plan_scene(self.gts, self.candidates, mode, iou_threshold)
        return self._plans[key]


# ------------------------------------------------------------------ scenes

def feature_layout(dist: SceneDistribution, n_levels: int) -> dict[str, slice]:
    c = dist.n_classes
    base = 3 + c + 4 + n_levels
    if dist.feature_dim < base:
        raise InvalidInput(f"feature_dim {dist.feature_dim} < {base} needed for {c} classes, {n_levels} levels")
    return {
        "overlap": slice(0, 1), "scale": slice(1, 2), "quality": slice(2, 3),
        "cls": slice(3, 3 + c), "offsets": slice(3 + c, 7 + c),
        "level": slice(7 + c, 7 + c + n_levels), "distractor": slice(base, dist.feature_dim),
    }


def _sample_gts(dist: SceneDistribution, rng: np.random.Generator, max_tries: int = 200) -> list[GroundTruth]:
    w, h = dist.extent
    n = int(rng.integers(dist.gt_count[0], dist.gt_count[1] + 1))
    out: list[GroundTruth] = []
    placed: list[np.ndarray] = []
    tries = 0
    while len(out) < n and tries < max_tries:
        tries += 1
        size = math.exp(rng.uniform(*np.log(dist.size_range)))
        ratio = math.exp(rng.uniform(*np.log(dist.ratio_range)))
        bw = min(size * math.sqrt(ratio), w - 2.0)
        bh = min(size / math.sqrt(ratio), h - 2.0)
        x0 = rng.uniform(1.0, w - 1.0 - bw)
        y0 = rng.uniform(1.0, h - 1.0 - bh)
        cls = int(rng.integers(0, dist.n_classes))
        box = np.array([x0, y0, x0 + bw, y0 + bh])
        grown = box + np.array([-1, -1, 1, 1]) * dist.min_gap
        if placed and iou_matrix(grown[None], np.array(placed)).max() > 0:
            continue
        placed.append(box)
        out.append(GroundTruth(Box(*box), cls))
    return out


def _owner_geometry(cands: Candidates, gts: Sequence[GroundTruth], mode: str):
    """Per candidate: owning GT index (-1 if none), overlap, scale and quality signals, ltrb target."""
    n = len(cands)
    owner = np.full(n, -1)
    overlap = np.zeros(n)
    scale = np.zeros(n)
    quality = np.zeros(n)
    ltrb = np.zeros((n, 4))
    if not gts:
        return owner, overlap, scale, quality, ltrb
    gboxes = np.array([g.box.as_array() for g in gts])
    if mode == POINT:
        for gi, gb in enumerate(gboxes):
            offs = ltrb_offsets(cands.centers, gb)
            inside = offs.min(axis=1) > 0
            owner[inside] = gi
            ltrb[inside] = offs[inside]
        ins = owner >= 0
        o = ltrb[ins]
        maxoff = o.max(axis=1)
        lo, hi = cands.range_lo[ins], cands.range_hi[ins]
        overlap[ins] = 1.0
        scale[ins] = (((maxoff > lo) | ((lo == 0) & (maxoff >= 0))) & (maxoff <= hi)).astype(float)
        lr = np.minimum(o[:, 0], o[:, 2]) / np.maximum(o[:, 0], o[:, 2])
        tb = np.minimum(o[:, 1], o[:, 3]) / np.maximum(o[:, 1], o[:, 3])
        quality[ins] = np.sqrt(lr * tb)
        return owner, overlap, scale, quality, ltrb
    ious = iou_matrix(cands.boxes, gboxes)
    best = ious.argmax(axis=1)
    biou = ious[np.arange(n), best]
    has = biou > 0
    owner[has] = best[has]
    overlap[:] = (biou > 0.1).astype(float)
    quality[:] = biou
    # level of each GT's best-IoU anchor
    gt_level = np.array([int(cands.level[ious[:, gi] == ious[:, gi].max()].min()) for gi in range(len(gts))])
    scale[has] = (cands.level[has] == gt_level[best[has]]).astype(float)
    for i in np.flatnonzero(has):
        ltrb[i] = ltrb_offsets(cands.centers[i], gboxes[best[i]])[0]
    return owner, overlap, scale, quality, ltrb


def _features(cands: Candidates, gts: Sequence[GroundTruth], dist: SceneDistribution,
              mode: str, rng: np.random.Generator) -> np.ndarray:
    n = len(cands)
    n_levels = len(cands.levels)
    lay = feature_layout(dist, n_levels)
    sig = dist.signal
    owner, overlap, scale, quality, ltrb = _owner_geometry(cands, gts, mode)
    f = np.zeros((n, dist.feature_dim))
    f[:, lay["overlap"]] = sig.overlap * overlap[:, None]
    f[:, lay["scale"]] = sig.scale * scale[:, None]
    f[:, lay["quality"]] = sig.quality * quality[:, None]
    cls = np.zeros((n, dist.n_classes))
    has = owner >= 0
    cls[np.flatnonzero(has), [gts[o].class_id for o in owner[has]]] = overlap[has]
    f[:, lay["cls"]] = sig.cls * cls
    logoff = np.log(np.maximum(ltrb / cands.strides[:, None], LOG_OFFSET_FLOOR))
    logoff[~has] = math.log(LOG_OFFSET_FLOOR)
    f[:, lay["level"]] = np.eye(n_levels)[cands.level - 1]
    # noise: one draw for every entry, deterministic order; noise_std == 0
    # switches off every source so features are exact functions of geometry
    noise = rng.standard_normal((n, dist.feature_dim))
    if dist.noise_std == 0:
        noise[:] = 0.0
    off_sd = sig.offset_noise * (1.0 + sig.edge_gain * (1.0 - quality))
    sl = lay["offsets"]
    f[:, sl] = logoff + noise[:, sl] * off_sd[:, None]
    signal_cols = np.r_[0:3 + dist.n_classes]
    f[:, signal_cols] += dist.noise_std * noise[:, signal_cols]
    f[:, lay["distractor"]] = noise[:, lay["distractor"]]
    return f


def generate_scenes(dist: SceneDistribution, n: int, seed: int, strides: Sequence[int] = (16, 32, 64, 128, 256),
                    mode: str = POINT, ratios: Sequence[float] = (0.5, 1.0, 2.0)) -> list[Scene]:
    if n < 1:
        raise InvalidInput("n must be >= 1")
    w, h = dist.extent
    if min(w, h) < max(strides):
        raise InvalidInput(f"extent {dist.extent} smaller than max stride {max(strides)}")
    levels = usable_levels(default_levels(strides), dist.extent)
    grid = generate_candidates(levels, dist.extent, mode, ratios)
    scenes = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        gts = _sample_gts(dist, rng)
        cands = Candidates(grid.kind, grid.levels, grid.level, grid.centers, grid.boxes)
        cands.features = _features(cands, gts, dist, mode, rng)
        scenes.append(Scene(gts, cands, seed, i, tuple(dist.extent)))
    return scenes


@functools.lru_cache(maxsize=16)
def benchmark_scenes(bench: Benchmark) -> tuple[list[Scene], list[Scene]]:
    """Train / val scenes of a benchmark, from disjoint seed streams."""
    kw = dict(strides=bench.strides, mode=bench.mode, ratios=bench.anchor_ratios)
    train = generate_scenes(bench.distribution, bench.n_train, 2 * bench.scene_seed, **kw)
    val = generate_scenes(bench.distribution, bench.n_val, 2 * bench.scene_seed + 1, **kw)
    return train, val


# ------------------------------------------------------------------- model

@dataclass
class ToyModel:
    cls_w: np.ndarray  # (C, m)
    cls_b: np.ndarray  # (C,)
    reg_w: np.ndarray  # (4, m)
    reg_b: np.ndarray  # (4,)
    train_cfg: TrainConfig = TrainConfig()
    loss_trace: list[float] = field(default_factory=list)

    def scores(self, feats: np.ndarray) -> np.ndarray:
        z = feats @ self.cls_w.T + self.cls_b
        return 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))

    def offsets(self, feats: np.ndarray, strides: np.ndarray) -> np.ndarray:
        z = np.clip(feats @ self.reg_w.T + self.reg_b, -6, 6)
        return strides[:, None] * np.exp(z)

    def copy(self) -> "ToyModel":
        return ToyModel(self.cls_w.copy(), self.cls_b.copy(), self.reg_w.copy(), self.reg_b.copy(),
                        self.train_cfg, list(self.loss_trace))


def init_model(dist: SceneDistribution, n_levels: int, cfg: TrainConfig = TrainConfig()) -> ToyModel:
    m = dist.feature_dim
    lay = feature_layout(dist, n_levels)
    reg_w = np.zeros((4, m))
    reg_w[np.arange(4), np.arange(lay["offsets"].start, lay["offsets"].stop)] = 1.0
    prior = -math.log((1 - cfg.prior) / cfg.prior)
    return ToyModel(np.zeros((dist.n_classes, m)), np.full(dist.n_classes, prior), reg_w, np.zeros(4), cfg)


@dataclass
class _PairTable:
    """Static (candidate, GT) pairs of a scene's candidate sets, flattened.

    Pairs are grouped by GT; ``targets`` are the ltrb regression targets.
    """
    pos: np.ndarray
    gt: np.ndarray
    cls: np.ndarray
    targets: np.ndarray
    levels: np.ndarray  # best level per GT
    ratios: np.ndarray  # aspect ratio per GT
    baseline_pairs: np.ndarray
    ignored: np.ndarray  # candidate positions ignored by the baseline


def _pair_table(scene: Scene, mode: str, iou_thr: float) -> _PairTable:
    key = ("pairs", mode, iou_thr)
    if key in scene._plans:
        return scene._plans[key]
    plan = scene.plan(mode, iou_thr)
    cands = scene.candidates
    pos = np.concatenate([gp.positions for gp in plan]).astype(int) if plan else np.zeros(0, dtype=int)
    gt = np.concatenate([np.full(len(gp.positions), i) for i, gp in enumerate(plan)]).astype(int) \
        if plan else np.zeros(0, dtype=int)
    cls = np.array([scene.gts[g].class_id for g in gt], dtype=int)
    targets = np.zeros((len(pos), 4))
    for i, g in enumerate(scene.gts):
        m = gt == i
        targets[m] = ltrb_offsets(cands.centers[pos[m]], g.box.as_array())
    base = assign_fixed_baseline(scene, mode, plan=plan, iou_threshold=iou_thr)
    lookup = {(int(cands.ids[p]), int(g)): j for j, (p, g) in enumerate(zip(pos, gt))}
    baseline_pairs = np.array(sorted(lookup[(c, g)] for c, (g, _) in base.positives.items()), dtype=int)
    id_to_pos = {int(c): i for i, c in enumerate(cands.ids)}
    ignored = np.array(sorted(id_to_pos[c] for c in base.ignored), dtype=int)
    table = _PairTable(pos, gt, cls, targets, np.array([gp.level for gp in plan], dtype=int),
                       np.array([gp.ratio for gp in plan]), baseline_pairs, ignored)
    scene._plans[key] = table
    return table


def _k_per_gt(table: _PairTable, s: HpVector) -> np.ndarray:
    return np.array([lookup_k(s, int(lv), float(r)) for lv, r in zip(table.levels, table.ratios)], dtype=int)


def dynamic_pairs(table: _PairTable, ids: np.ndarray, comb: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Vectorised top-k per GT plus conflict resolution; returns selected pair indices.

    Same rule as :func:`hpsdet.assignment.assign_dynamic`: rank by (loss, id)
    within each GT, keep the first k, then give each contested candidate to the
    claim with the lowest (loss, GT index).
    """
    if len(table.pos) == 0:
        return np.zeros(0, dtype=int)
    cid = ids[table.pos]
    order = np.lexsort((cid, comb, table.gt))
    g_sorted = table.gt[order]
    starts = np.searchsorted(g_sorted, g_sorted, side="left")
    rank = np.arange(len(order)) - starts
    claims = order[rank < k[g_sorted]]
    o2 = np.lexsort((table.gt[claims], comb[claims], cid[claims]))
    claims = claims[o2]
    c_sorted = cid[claims]
    first = np.ones(len(claims), dtype=bool)
    first[1:] = c_sorted[1:] != c_sorted[:-1]
    return np.sort(claims[first])


def _selected_pairs(scene: Scene, table: _PairTable, p: np.ndarray, off: np.ndarray, assigner,
                    k: np.ndarray | None, params: LossParams) -> np.ndarray:
    if isinstance(assigner, str):
        return table.baseline_pairs
    if len(table.pos) == 0:
        return np.zeros(0, dtype=int)
    l_cls = focal_loss(p[table.pos, table.cls], np.ones(len(table.pos), dtype=int), params)
    _, l_reg, _ = iou_loss_ltrb(off[table.pos], table.targets, params)
    comb = l_cls + params.mix_alpha * l_reg
    return dynamic_pairs(table, scene.candidates.ids, comb, k)


def train(train_scenes: Sequence[Scene], assigner: HpVector | str, loss_params: LossParams = LossParams(),
          train_cfg: TrainConfig = TrainConfig(), seed: int = 0, mode: str | None = None,
          dist: SceneDistribution | None = None, iou_threshold: float = 0.1,
          model: ToyModel | None = None) -> ToyModel:
    """Gradient descent on focal loss over P u N plus IoU loss over P.

    ``assigner`` is a searched vector (dynamic assignment, redone every step
    with the current predictions) or ``"baseline"`` for the fixed rule.
    """
    if not train_scenes:
        raise InvalidInput("no training scenes")
    if isinstance(assigner, str) and assigner != BASELINE:
        raise InvalidInput(f"unknown assigner {assigner!r}")
    mode = mode or train_scenes[0].candidates.kind
    cands0 = train_scenes[0].candidates
    if model is None:
        if dist is None:
            dist = SceneDistribution(feature_dim=cands0.features.shape[1])
        model = init_model(dist, len(cands0.levels), train_cfg)
    model = model.copy()
    model.train_cfg = train_cfg
    tables = [_pair_table(sc, mode, iou_threshold) for sc in train_scenes]
    ks = [None if isinstance(assigner, str) else _k_per_gt(t, assigner) for t in tables]
    rng = np.random.default_rng(seed)
    n = len(train_scenes)
    bs = train_cfg.batch_size
    order = np.concatenate([rng.permutation(n) for _ in range(train_cfg.steps * bs // n + 1)])
    a = loss_params.mix_alpha
    for step in range(train_cfg.steps):
        g_cw = np.zeros_like(model.cls_w)
        g_cb = np.zeros_like(model.cls_b)
        g_rw = np.zeros_like(model.reg_w)
        g_rb = np.zeros_like(model.reg_b)
        total, n_pos = 0.0, 0
        for si in order[step * bs:(step + 1) * bs]:
            sc, table = train_scenes[si], tables[si]
            F = sc.candidates.features
            p = model.scores(F)
            off = model.offsets(F, sc.candidates.strides)
            sel = _selected_pairs(sc, table, p, off, assigner, ks[si], loss_params)
            pos = table.pos[sel]
            y = np.zeros(p.shape, dtype=int)
            y[pos, table.cls[sel]] = 1
            if len(table.ignored):
                keep = np.ones(len(p), dtype=bool)
                keep[table.ignored] = False
                pv, yv, Fv = p[keep], y[keep], F[keep]
            else:
                pv, yv, Fv = p, y, F
            total += float(focal_loss(pv, yv, loss_params).sum())
            gz = focal_loss_logit_grad(pv, yv, loss_params)
            g_cw += gz.T @ Fv
            g_cb += gz.sum(axis=0)
            n_pos += len(sel)
            if len(sel):
                _, l_reg, d_off = iou_loss_ltrb(off[pos], table.targets[sel], loss_params)
                total += a * float(l_reg.sum())
                gzr = a * d_off * off[pos]
                g_rw += gzr.T @ F[pos]
                g_rb += gzr.sum(axis=0)
        norm = max(1, n_pos)
        total /= norm
        if not math.isfinite(total):
            raise TrainingDiverged(step)
        model.loss_trace.append(total)
        model.cls_w -= train_cfg.lr * g_cw / norm
        model.cls_b -= train_cfg.lr * g_cb / norm
        model.reg_w -= train_cfg.reg_lr * g_rw / norm
        model.reg_b -= train_cfg.reg_lr * g_rb / norm
        if not (np.all(np.isfinite(model.cls_w)) and np.all(np.isfinite(model.reg_w))):
            raise TrainingDiverged(step)
    return model


def training_assignment(scene: Scene, model: ToyModel, assigner: HpVector | str, params: LossParams = LossParams(),
                        mode: str | None = None, iou_threshold: float = 0.1) -> AssignmentResult:
    """The assignment the trainer would use for ``scene`` under the current ``model``."""
    mode = mode or scene.candidates.kind
    if isinstance(assigner, str):
        return assign_fixed_baseline(scene, mode, plan=scene.plan(mode, iou_threshold), iou_threshold=iou_threshold)
    cands = scene.candidates
    p = model.scores(cands.features)
    off = model.offsets(cands.features, cands.strides)
    id_to_pos = {int(c): i for i, c in enumerate(cands.ids)}

    def losses(gi, ids):
        g = scene.gts[gi]
        pos = np.array([id_to_pos[int(c)] for c in ids], dtype=int)
        l_cls = focal_loss(p[pos, g.class_id], np.ones(len(pos), dtype=int), params)
        _, l_reg, _ = iou_loss_ltrb(off[pos], ltrb_offsets(cands.centers[pos], g.box.as_array()), params)
        return l_cls, l_reg
    return assign_dynamic(scene, losses, assigner, mode, params, plan=scene.plan(mode, iou_threshold),
                          iou_threshold=iou_threshold)


# ---------------------------------------------------------------- inference

def nms(boxes: np.ndarray, scores: np.ndarray, iou_thr: float = NMS_IOU) -> np.ndarray:
    """Greedy NMS; indices of kept boxes, highest score first.

    Score ties are broken by box coordinates so the result does not depend on
    input order.
    """
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    scores = np.asarray(scores, dtype=float)
    if len(boxes) == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores))
    keep = []
    while len(order):
        i = order[0]
        keep.append(i)
        if len(order) == 1:
            break
        ov = iou_matrix(boxes[i][None], boxes[order[1:]])[0]
        order = order[1:][ov <= iou_thr]
    return np.array(keep, dtype=int)


def predict_arrays(model: ToyModel, scene: Scene, score_thr: float = SCORE_THRESHOLD,
                   top_k: int = TOP_K_PER_LEVEL, nms_iou: float = NMS_IOU):
    """``(boxes, scores, classes)`` after thresholding, per-level top-k and per-class NMS."""
    cands = scene.candidates
    F = cands.features
    p = model.scores(F)
    off = model.offsets(F, cands.strides)
    if scene.extent is not None:
        w, h = scene.extent
    else:
        # grid centres are symmetric about the image centre
        w, h = (cands.centers[:, 0].max() + cands.centers[:, 0].min(),
                cands.centers[:, 1].max() + cands.centers[:, 1].min())
    cx, cy = cands.centers[:, 0], cands.centers[:, 1]
    boxes = np.stack([np.clip(cx - off[:, 0], 0, w), np.clip(cy - off[:, 1], 0, h),
                      np.clip(cx + off[:, 2], 0, w), np.clip(cy + off[:, 3], 0, h)], axis=1)
    ci, cl = np.nonzero(p >= score_thr)
    sc = p[ci, cl]
    keep_idx = []
    for lv in np.unique(cands.level[ci]) if len(ci) else []:
        at = np.flatnonzero(cands.level[ci] == lv)
        if len(at) > top_k:
            at = at[np.lexsort((at, -sc[at]))[:top_k]]
        keep_idx.append(at)
    if not keep_idx:
        return np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=int)
    sel = np.sort(np.concatenate(keep_idx))
    ci, cl, sc = ci[sel], cl[sel], sc[sel]
    bx = boxes[ci]
    valid = (bx[:, 2] > bx[:, 0]) & (bx[:, 3] > bx[:, 1])
    ci, cl, sc, bx = ci[valid], cl[valid], sc[valid], bx[valid]
    out_b, out_s, out_c = [], [], []
    for c in np.unique(cl):
        m = cl == c
        k = nms(bx[m], sc[m], nms_iou)
        out_b.append(bx[m][k])
        out_s.append(sc[m][k])
        out_c.append(np.full(len(k), c))
    return np.concatenate(out_b), np.concatenate(out_s), np.concatenate(out_c).astype(int)


def predict(model: ToyModel, scene: Scene, **kw) -> list[Detection]:
    b, s, c = predict_arrays(model, scene, **kw)
    return [Detection(Box(*bb), int(cc), float(ss), scene.index) for bb, ss, cc in zip(b, s, c)]


def evaluate(model: ToyModel, scenes: Sequence[Scene], metric: str = "coco") -> float:
    dets: list[Detection] = []
    for sc in scenes:
        dets.extend(predict(model, sc))
    gts = {sc.index: sc.gts for sc in scenes}
    return coco_map(dets, gts) if metric == "coco" else map_at_50(dets, gts)


def train_and_evaluate(bench: Benchmark, assigner: HpVector | str, metric: str = "coco") -> float:
    train_scenes, val_scenes = benchmark_scenes(bench)
    model = train(train_scenes, assigner, bench.loss, bench.train, bench.train_seed, bench.mode,
                  bench.distribution, bench.candidate_iou)
    return evaluate(model, val_scenes, metric)


def objective(s: HpVector | str, bench: Benchmark) -> float:
    """AP on the validation scenes after training with dynamic assignment under ``s``."""
    return train_and_evaluate(bench, s)


def make_objective(bench: Benchmark):
    """Single-argument objective for the optimiser."""
    return functools.partial(objective, bench=bench)
