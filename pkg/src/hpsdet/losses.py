"""Focal classification loss, IoU regression loss and the combined ranking loss.

All kernels accept scalars or numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hpsdet import InvalidInput

P_CLAMP = 1e-7


@dataclass(frozen=True)
class LossParams:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    mix_alpha: float = 1.0
    iou_floor: float = 1e-6
    iou_form: str = "log"  # "log": -ln(IoU); "linear": 1 - IoU

    def __post_init__(self):
        vals = (self.focal_alpha, self.focal_gamma, self.mix_alpha, self.iou_floor)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInput("loss parameters must be finite")
        if not 0.0 < self.focal_alpha < 1.0:
            raise InvalidInput("focal_alpha must lie in (0, 1)")
        if self.focal_gamma < 0 or self.mix_alpha < 0:
            raise InvalidInput("focal_gamma and mix_alpha must be >= 0")
        if not 0.0 < self.iou_floor <= 1e-3:
            raise InvalidInput("iou_floor must lie in (0, 1e-3]")
        if self.iou_form not in ("log", "linear"):
            raise InvalidInput(f"unknown iou_form {self.iou_form!r}")


def _check_labels(y):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInput("labels must be 0 or 1")
    return y


def _scalar_out(x, *inputs):
    return float(x) if all(np.ndim(v) == 0 for v in inputs) else x


def focal_loss(p, y, params: LossParams = LossParams()):
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=float), P_CLAMP, 1 - P_CLAMP)
    pt = np.where(y == 1, p, 1 - p)
    at = np.where(y == 1, params.focal_alpha, 1 - params.focal_alpha)
    out = -at * (1 - pt) ** params.focal_gamma * np.log(pt)
    return _scalar_out(out, p, y)


def focal_loss_grad(p, y, params: LossParams = LossParams()):
    """Analytic d(focal_loss)/dp.

    With q = 1 - p_t the y=1 branch is
    ``alpha * (gamma q^(gamma-1) ln p - q^gamma / p)``; the y=0 branch is the
    same expression evaluated at ``1 - p`` with ``1 - alpha`` and the sign flipped.
    """
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=float), P_CLAMP, 1 - P_CLAMP)
    g = params.focal_gamma
    pt = np.where(y == 1, p, 1 - p)
    at = np.where(y == 1, params.focal_alpha, 1 - params.focal_alpha)
    q = 1 - pt
    # q ** (g - 1) is singular at g == 0 but multiplied by g there
    dq = g * q ** (g - 1) if g != 0 else np.zeros_like(q)
    d_pt = at * (dq * np.log(pt) - q ** g / pt)
    out = np.where(y == 1, d_pt, -d_pt)
    return _scalar_out(out, p, y)


def focal_loss_logit_grad(p, y, params: LossParams = LossParams()):
    """Gradient w.r.t. the logit z where p = sigmoid(z)."""
    p = np.clip(np.asarray(p, dtype=float), P_CLAMP, 1 - P_CLAMP)
    return focal_loss_grad(p, y, params) * p * (1 - p)


def iou_loss(iou_value, params: LossParams = LossParams()):
    v = np.asarray(iou_value, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
        raise InvalidInput("IoU must lie in [0, 1]")
    if params.iou_form == "linear":
        out = 1.0 - v
    else:
        out = -np.log(np.maximum(v, params.iou_floor))
    return _scalar_out(out, v)


def combined_loss(l_cls, l_reg, params: LossParams = LossParams()):
    return _scalar_out(np.asarray(l_cls, dtype=float) + params.mix_alpha * np.asarray(l_reg, dtype=float),
                       l_cls, l_reg)


def iou_loss_ltrb(pred: np.ndarray, target: np.ndarray, params: LossParams = LossParams()):
    """IoU loss between boxes sharing an anchor point, given as ``(l, t, r, b)``.

    ``pred`` must be positive. ``target`` may have negative entries (anchor
    centres outside their box). Returns ``(iou, loss, dloss/dpred)``; the
    gradient is zero wherever the IoU is clamped at the floor.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    l, t, r, b = pred.T
    lg, tg, rg, bg = target.T
    area_p = (l + r) * (t + b)
    area_g = (lg + rg) * (tg + bg)
    iw = np.minimum(l, lg) + np.minimum(r, rg)
    ih = np.minimum(t, tg) + np.minimum(b, bg)
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    union = area_p + area_g - inter
    iou = np.clip(inter / union, 0.0, 1.0)

    # d inter / d side: the intersection extent grows with the pred side only
    # where the pred side is the binding (smaller) one.
    d_inter = np.stack([(l < lg) * ih, (t < tg) * iw, (r < rg) * ih, (b < bg) * iw], axis=1) * overlap[:, None]
    d_area = np.stack([t + b, l + r, t + b, l + r], axis=1)
    d_union = d_area - d_inter
    d_iou = (d_inter * union[:, None] - inter[:, None] * d_union) / (union[:, None] ** 2)

    if params.iou_form == "linear":
        loss = 1.0 - iou
        grad = -d_iou
    else:
        active = iou > params.iou_floor
        loss = -np.log(np.maximum(iou, params.iou_floor))
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.where(active[:, None], -d_iou / np.where(active, iou, 1.0)[:, None], 0.0)
    return iou, loss, grad
