import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpsdet import InvalidInput
from hpsdet.hpspace import (CONFIG_NAMES, HpVector, baseline_equivalent, bounds, from_string, lookup_k,
                            make_config, ratio_bin, round_to_hp, to_string)

RETINANET = "11,11,20, 44,58,51, 40,70,60, 41,55,80, 47,77,73"
FCOS = "17,15,15,20,15,25,15,17,21,16,25,19,20,4,3"
ATSS = "7,11,12,27,29,25,20,20,22,18,22,31,3,31,24"


@pytest.mark.parametrize("name,dim", [("3x5", 15), ("1x5", 5), ("5", 5), ("3", 3), ("1", 1)])
def test_config_dimensions(name, dim):
    assert make_config(name).dim == dim


def test_config_names_enumeration():
    assert CONFIG_NAMES == ("3x5", "1x5", "5", "3", "1")
    with pytest.raises(InvalidInput):
        make_config("7")
    with pytest.raises(InvalidInput):
        make_config("3", mode="weird")


@pytest.mark.parametrize("ratio,expected", [(0.1, 0), (0.5, 0), (0.5000001, 1), (1.0, 1), (2.0, 1), (2.5, 2)])
def test_ratio_bin_three(ratio, expected):
    assert ratio_bin(make_config("3"), ratio) == expected


@pytest.mark.parametrize("ratio,expected", [(0.25, 0), (0.3, 1), (0.5, 1), (1.0, 2), (2.0, 2), (3.0, 3),
                                            (4.0, 3), (4.1, 4)])
def test_ratio_bin_five(ratio, expected):
    assert ratio_bin(make_config("5"), ratio) == expected


def test_ratio_bin_rejects_nonpositive():
    with pytest.raises(InvalidInput):
        ratio_bin(make_config("3"), 0.0)


def test_lookup_retinanet_vector():
    s = from_string(RETINANET, make_config("3x5", "anchor"))
    assert lookup_k(s, 1, 5.0) == 20
    assert lookup_k(s, 4, 3.0) == 80
    assert lookup_k(s, 5, 0.5) == 47


def test_lookup_fcos_vector():
    s = from_string(FCOS, make_config("3x5", "point"))
    assert lookup_k(s, 5, 1.0) == 4


def test_atss_vector_needs_wider_bound():
    with pytest.raises(InvalidInput):
        from_string(ATSS, make_config("3x5", "point"))
    s = from_string(ATSS, make_config("3x5", "atss-like"))
    assert lookup_k(s, 4, 0.2) == 18


def test_level_agnostic_lookup():
    s = from_string("24", make_config("1"))
    for level in (1, 3, 5):
        for ratio in (0.1, 1.0, 9.0):
            assert lookup_k(s, level, ratio) == 24


def test_searched_vectors_parse():
    assert from_string("5,19,25,24, 20", make_config("1x5")).values == (5, 19, 25, 24, 20)
    assert from_string("10,16,16,8,25", make_config("5")).values == (10, 16, 16, 8, 25)
    assert from_string("16,25,21", make_config("3")).values == (16, 25, 21)


def test_lookup_rejects_bad_level():
    s = from_string(FCOS, make_config("3x5"))
    with pytest.raises(InvalidInput):
        lookup_k(s, 6, 1.0)


@pytest.mark.parametrize("mode,hi", [("anchor", 80), ("point", 25), ("atss-like", 32)])
def test_bounds(mode, hi):
    assert bounds(make_config("3x5", mode)) == [(1, hi)] * 15


def test_round_to_hp_examples():
    cfg = make_config("3")
    assert round_to_hp([16.4, 24.5, 0.2], cfg).values == (16, 25, 1)
    assert round_to_hp([3, 7, 11], cfg).values == (3, 7, 11)
    assert round_to_hp([0, 0, 0], cfg).values == (1, 1, 1)
    with pytest.raises(InvalidInput):
        round_to_hp([1, 2], cfg)


@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5))
def test_round_to_hp_in_bounds(x):
    cfg = make_config("5")
    v = round_to_hp(x, cfg).values
    assert all(1 <= e <= 25 for e in v)


@given(st.sampled_from(CONFIG_NAMES), st.data())
def test_string_round_trip(name, data):
    cfg = make_config(name)
    vals = data.draw(st.lists(st.integers(1, 25), min_size=cfg.dim, max_size=cfg.dim))
    s = HpVector(tuple(vals), cfg)
    assert from_string(to_string(s), cfg) == s
    assert from_string(f'"{s}"', cfg) == s


def test_vector_validation():
    cfg = make_config("3")
    with pytest.raises(InvalidInput):
        HpVector((1, 2), cfg)
    with pytest.raises(InvalidInput):
        HpVector((0, 2, 3), cfg)
    with pytest.raises(InvalidInput):
        from_string("1,a,3", cfg)


@given(st.sampled_from(CONFIG_NAMES))
def test_flat_index_round_trip(name):
    cfg = make_config(name)
    for i in range(cfg.dim):
        lv, b = cfg.unflatten(i)
        assert cfg.flat_index(lv, b) == i


def test_baseline_equivalent():
    assert baseline_equivalent(make_config("3")).values == (25, 25, 25)
    assert baseline_equivalent(make_config("1x5", "anchor")).values == (80,) * 5
