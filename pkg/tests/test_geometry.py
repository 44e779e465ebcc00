import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpsdet import InvalidInput
from hpsdet.geometry import (ANCHOR, POINT, Box, Candidates, GroundTruth, LevelSpec, aspect_ratio,
                             best_level, default_levels, generate_candidates, iou, iou_matrix,
                             level_for_offset, ltrb_offsets, max_regression_offset)
from oracles import raster_iou


def gt(x0, y0, x1, y1, c=0):
    return GroundTruth(Box(x0, y0, x1, y1), c)


def test_iou_identical():
    assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0


def test_iou_disjoint():
    assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0


def test_iou_half_shift_matches_raster_oracle():
    a, b = (0, 0, 10, 10), (5, 0, 15, 10)
    assert raster_iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(Box(*a), Box(*b)) == pytest.approx(raster_iou(a, b), abs=1e-12)


int_box = st.tuples(st.integers(0, 12), st.integers(0, 12), st.integers(1, 8), st.integers(1, 8)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(int_box, int_box)
def test_iou_matches_raster_oracle(a, b):
    assert iou(Box(*a), Box(*b)) == pytest.approx(raster_iou(a, b), abs=1e-12)


@given(int_box, int_box)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(Box(*a), Box(*b))
    assert 0.0 <= v <= 1.0
    assert v == iou(Box(*b), Box(*a))


@given(st.lists(int_box, min_size=1, max_size=5), st.lists(int_box, min_size=1, max_size=5))
def test_iou_matrix_agrees_with_scalar(a, b):
    m = iou_matrix(np.array(a, float), np.array(b, float))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            assert m[i, j] == pytest.approx(iou(Box(*x), Box(*y)), abs=1e-12)


def test_degenerate_box_rejected():
    with pytest.raises(InvalidInput):
        Box(0, 0, 0, 5)
    with pytest.raises(InvalidInput):
        Box(0, 0, math.nan, 5)


@pytest.mark.parametrize("box,expected", [((0, 0, 10, 10), 1.0), ((0, 0, 20, 10), 2.0), ((0, 0, 10, 40), 0.25)])
def test_aspect_ratio(box, expected):
    assert aspect_ratio(gt(*box)) == expected


def test_candidates_clipped_to_extent_count():
    # 8x8 + 4x4 + 2x2 + 1x1 grid cells
    expected = sum((64 // s) ** 2 for s in (8, 16, 32, 64))
    assert expected == 85
    c = generate_candidates(default_levels((8, 16, 32, 64, 128)), (64, 64), POINT)
    assert len(c) == 85
    assert set(np.unique(c.level)) == {1, 2, 3, 4}


def test_single_level_grid_centres():
    lv = [LevelSpec(1, 128, 512.0, (0.0, math.inf))]
    c = generate_candidates(lv, (256, 256), POINT)
    assert sorted(map(tuple, c.centers.tolist())) == sorted([(64, 64), (192, 64), (64, 192), (192, 192)])


def test_anchor_count_and_shape():
    lv = [LevelSpec(1, 16, 32.0, (0.0, math.inf))]
    c = generate_candidates(lv, (32, 32), ANCHOR, ratios=(0.5, 1.0, 2.0))
    assert len(c) == 12
    w = c.boxes[:, 2] - c.boxes[:, 0]
    h = c.boxes[:, 3] - c.boxes[:, 1]
    np.testing.assert_allclose(w * h, 32.0 ** 2)
    np.testing.assert_allclose(sorted(set(np.round(w / h, 9))), [0.5, 1.0, 2.0])


def test_generate_candidates_errors():
    with pytest.raises(InvalidInput):
        generate_candidates([], (64, 64))
    with pytest.raises(InvalidInput):
        generate_candidates(default_levels((8,)), (64, 64), "bogus")
    with pytest.raises(InvalidInput):
        generate_candidates(default_levels((128,)), (64, 64))
    with pytest.raises(InvalidInput):
        generate_candidates(default_levels((16,)), (40, 40))


def test_candidate_ids_sequential_and_stable_under_permutation():
    c = generate_candidates(default_levels((16, 32)), (64, 64), POINT)
    assert c.ids.tolist() == list(range(len(c)))
    perm = np.random.default_rng(0).permutation(len(c))
    p = c.permuted(perm)
    assert p.ids.tolist() == perm.tolist()
    assert p[0].center == c[int(perm[0])].center


@pytest.mark.parametrize("p,expected", [((50, 50), 50), ((10, 10), 90), ((25, 75), 75)])
def test_max_regression_offset(p, expected):
    # (25,75): offsets 25, 75, 75, 25
    assert max_regression_offset(p, gt(0, 0, 100, 100)) == expected


def test_max_regression_offset_outside_raises():
    with pytest.raises(InvalidInput):
        max_regression_offset((120, 10), gt(0, 0, 100, 100))


def test_ltrb_offsets():
    out = ltrb_offsets(np.array([[25.0, 75.0]]), np.array([0.0, 0.0, 100.0, 100.0]))
    assert out.tolist() == [[25.0, 75.0, 75.0, 25.0]]


def test_best_level_anchor_exact_match():
    levels = default_levels((16, 32))
    c = generate_candidates(levels, (128, 128), ANCHOR, ratios=(1.0,))
    i = int(np.flatnonzero(c.level == 2)[0])
    g = GroundTruth(Box(*c.boxes[i]), 0)
    assert best_level(g, c, ANCHOR) == 2


def test_best_level_point_range_lookup():
    c = generate_candidates(default_levels((8, 16, 32, 64, 128)), (256, 256), POINT)
    assert best_level(gt(0, 0, 100, 100), c, POINT) == 1
    assert best_level(gt(0, 0, 200, 200), c, POINT) == 2


def test_best_level_anchor_tie_goes_to_lower_level():
    lv = [LevelSpec(1, 16, 32.0, (0, 64)), LevelSpec(2, 32, 32.0, (64, math.inf))]
    centers = np.array([[16.0, 16.0], [16.0, 16.0]])
    boxes = np.array([[0.0, 0.0, 32.0, 32.0], [0.0, 0.0, 32.0, 32.0]])
    c = Candidates(ANCHOR, lv, np.array([2, 1]), centers, boxes)
    assert best_level(gt(0, 0, 30, 30), c, ANCHOR) == 1


def test_level_for_offset_boundaries():
    levels = default_levels((8, 16, 32, 64, 128))
    assert level_for_offset(levels, 0.0) == 1
    assert level_for_offset(levels, 64.0) == 1
    assert level_for_offset(levels, 64.5) == 2
    assert level_for_offset(levels, 1e6) == 5


def test_default_levels_last_range_open():
    lv = default_levels((16, 32, 64))
    assert lv[-1].regress_range[1] == math.inf
    assert lv[0].contains_offset(0.0)
    assert not lv[1].contains_offset(64.0)
