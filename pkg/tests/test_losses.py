import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpsdet import InvalidInput
from hpsdet.losses import (LossParams, combined_loss, focal_loss, focal_loss_grad, focal_loss_logit_grad,
                           iou_loss, iou_loss_ltrb)


def ref_focal(p, y, alpha, gamma):
    """Scalar reference written straight from the definition."""
    if y == 1:
        return -alpha * (1 - p) ** gamma * math.log(p)
    return -(1 - alpha) * p ** gamma * math.log(1 - p)


def test_focal_perfect_prediction_is_zero():
    assert focal_loss(1 - 1e-12, 1) == pytest.approx(0.0, abs=1e-12)


def test_focal_confident_positive():
    # 0.25 * 0.1**2 * -ln(0.9)
    assert focal_loss(0.9, 1) == pytest.approx(2.634013e-4, rel=1e-6)
    assert focal_loss(0.9, 1) == pytest.approx(ref_focal(0.9, 1, 0.25, 2.0), rel=1e-12)


def test_focal_gamma_zero_is_weighted_ce():
    params = LossParams(focal_gamma=0.0)
    assert focal_loss(0.5, 0, params) == pytest.approx(0.75 * math.log(2), rel=1e-12)
    assert focal_loss(0.5, 0, params) == pytest.approx(0.519860, abs=1e-6)


@given(st.floats(0.01, 0.99), st.sampled_from([0, 1]), st.floats(0.05, 0.95), st.floats(0.0, 4.0))
def test_focal_matches_reference(p, y, alpha, gamma):
    params = LossParams(focal_alpha=alpha, focal_gamma=gamma)
    assert focal_loss(p, y, params) == pytest.approx(ref_focal(p, y, alpha, gamma), rel=1e-10, abs=1e-15)


def test_focal_grad_gamma_zero():
    params = LossParams(focal_gamma=0.0)
    for p in (0.1, 0.4, 0.8):
        assert focal_loss_grad(p, 1, params) == pytest.approx(-0.25 / p, rel=1e-12)


def test_focal_grad_finite_difference_at_point_three():
    h = 1e-6
    fd = (focal_loss(0.3 + h, 1) - focal_loss(0.3 - h, 1)) / (2 * h)
    assert abs(focal_loss_grad(0.3, 1) - fd) <= 1e-4 * abs(fd)


@given(st.floats(0.02, 0.98), st.floats(0.0, 3.0))
def test_focal_grad_mirror_symmetry(p, gamma):
    # y=0 at p equals y=1 at 1-p with alpha -> 1-alpha and the sign flipped
    a = LossParams(focal_alpha=0.25, focal_gamma=gamma)
    b = LossParams(focal_alpha=0.75, focal_gamma=gamma)
    assert focal_loss_grad(p, 0, a) == pytest.approx(-focal_loss_grad(1 - p, 1, b), rel=1e-9)
    assert focal_loss(p, 0, a) == pytest.approx(focal_loss(1 - p, 1, b), rel=1e-12)


def test_focal_array_broadcast_and_labels():
    out = focal_loss(np.array([0.2, 0.7]), np.array([1, 0]))
    assert out.shape == (2,)
    with pytest.raises(InvalidInput):
        focal_loss(0.5, 2)


def test_focal_clamps_extremes():
    assert math.isfinite(focal_loss(0.0, 1))
    assert math.isfinite(focal_loss_grad(1.0, 0))


@given(st.floats(-6, 6), st.sampled_from([0, 1]))
def test_logit_grad_finite_difference(z, y):
    sig = lambda v: 1 / (1 + math.exp(-v))
    h = 1e-5
    fd = (focal_loss(sig(z + h), y) - focal_loss(sig(z - h), y)) / (2 * h)
    assert focal_loss_logit_grad(sig(z), y) == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_iou_loss_values():
    assert iou_loss(1.0) == 0.0
    assert iou_loss(math.exp(-1)) == pytest.approx(1.0, rel=1e-12)
    assert iou_loss(0.0) == pytest.approx(-math.log(1e-6))
    assert iou_loss(0.25, LossParams(iou_form="linear")) == 0.75
    with pytest.raises(InvalidInput):
        iou_loss(1.5)


def test_combined_loss():
    assert combined_loss(0.0, 0.0) == 0.0
    assert combined_loss(0.3, 0.5) == pytest.approx(0.8)
    assert combined_loss(0.3, 0.5, LossParams(mix_alpha=0.0)) == 0.3


def test_params_validation():
    with pytest.raises(InvalidInput):
        LossParams(focal_alpha=1.5)
    with pytest.raises(InvalidInput):
        LossParams(focal_gamma=-1)
    with pytest.raises(InvalidInput):
        LossParams(iou_form="giou")


ltrb = st.lists(st.floats(0.5, 30.0), min_size=4, max_size=4)


@given(ltrb, ltrb)
def test_iou_ltrb_matches_box_iou(pred, target):
    from oracles import box_iou
    iou, loss, _ = iou_loss_ltrb(np.array([pred]), np.array([target]))
    # both boxes anchored at the origin point
    a = (-pred[0], -pred[1], pred[2], pred[3])
    b = (-target[0], -target[1], target[2], target[3])
    assert iou[0] == pytest.approx(box_iou(a, b), rel=1e-12)
    assert loss[0] == pytest.approx(-math.log(max(box_iou(a, b), 1e-6)), rel=1e-9)


@given(ltrb, ltrb)
def test_iou_ltrb_gradient_finite_difference(pred, target):
    pred, target = np.array([pred]), np.array([target])
    # keep away from the kinks where a pred side equals a target side
    if np.min(np.abs(pred - target)) < 1e-3:
        return
    _, _, grad = iou_loss_ltrb(pred, target)
    h = 1e-6
    for j in range(4):
        up, dn = pred.copy(), pred.copy()
        up[0, j] += h
        dn[0, j] -= h
        fd = (iou_loss_ltrb(up, target)[1][0] - iou_loss_ltrb(dn, target)[1][0]) / (2 * h)
        assert grad[0, j] == pytest.approx(fd, rel=1e-4, abs=1e-7)
