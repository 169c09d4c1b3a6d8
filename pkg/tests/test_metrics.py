import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scadkit.metrics import (
    EmptyCloud, EmptyList, EmptySet, LengthMismatch, MetricsReport, VoxelHistogram, chamfer, feedback_accuracy,
    invalid_ratio, jsd, lcs_length, mmd, rouge_l, rouge_tokens,
)
from scadkit.mutate import ErrorType
from scadkit.review import FeedbackRecord

from oracles import chamfer_bruteforce, lcs_bruteforce
from strategies import clouds


def test_chamfer_examples():
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    assert chamfer([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]]) == 0.5
    p = np.random.default_rng(0).random((20, 3))
    assert chamfer(p, p) == 0.0
    with pytest.raises(EmptyCloud):
        chamfer(np.zeros((0, 3)), p)


@settings(max_examples=60, deadline=None)
@given(clouds(), clouds())
def test_chamfer_properties(p, q):
    d = chamfer(p, q)
    assert d >= 0
    assert d == pytest.approx(chamfer(q, p), abs=1e-12)
    assert d == pytest.approx(chamfer_bruteforce(p, q), abs=1e-12)
    assert chamfer(p, p[::-1]) == 0


def test_mmd_examples():
    rng = np.random.default_rng(1)
    a, b = rng.random((30, 3)), rng.random((40, 3)) + 1
    assert mmd([a, b], [a, b]) == 0
    assert mmd([a], [b]) == pytest.approx(chamfer(a, b))
    assert mmd([a, b], [a]) == pytest.approx((0 + chamfer(b, a)) / 2)
    with pytest.raises(EmptySet):
        mmd([], [a])


def test_mmd_bounded_by_any_fixed_match():
    rng = np.random.default_rng(2)
    s = [rng.random((25, 3)) for _ in range(4)]
    g = [rng.random((25, 3)) for _ in range(3)]
    for x0 in g:
        assert mmd(s, g) <= np.mean([chamfer(y, x0) for y in s]) + 1e-15


def test_jsd_examples():
    rng = np.random.default_rng(3)
    a = rng.uniform(-0.5, 0.5, (200, 3))
    assert jsd([a], [a]) < 1e-12
    left, right = a.copy(), a.copy()
    left[:, 0] = -0.4
    right[:, 0] = 0.4
    assert jsd([left], [right]) == pytest.approx(math.log(2), abs=1e-9)
    with pytest.raises(EmptySet):
        jsd([], [a])


@settings(max_examples=100, deadline=None)
@given(clouds(), clouds(), st.integers(2, 20))
def test_jsd_bounds_and_symmetry(p, q, res):
    p, q = p / 2, q / 2
    v = jsd([p], [q], res)
    assert -1e-15 <= v <= math.log(2) + 1e-12
    assert v == pytest.approx(jsd([q], [p], res), abs=1e-12)


def test_voxel_histogram_totals():
    pts = np.random.default_rng(4).uniform(-0.7, 0.7, (500, 3))
    h = VoxelHistogram.from_clouds([pts, pts], 8)
    assert h.total == 1000 == h.counts.sum()
    assert h.distribution().sum() == pytest.approx(1.0)


def test_invalid_ratio():
    good = "cube(1);"
    assert invalid_ratio([good, good, good, "cube(-1);"]) == 0.25
    assert invalid_ratio([good]) == 0
    assert invalid_ratio(["nonsense(", "cube(x);"]) == 1
    with pytest.raises(EmptyList):
        invalid_ratio([])


def fb(t, b, sid="s"):
    return FeedbackRecord(sid, ErrorType(t), b, "text")


def test_feedback_accuracy():
    gold = [fb("size", k + 1) for k in range(10)]
    assert feedback_accuracy(gold, gold) == 1.0
    assert feedback_accuracy([fb("size", k + 2) for k in range(10)], gold) == 0.0
    pred = gold[:3] + [fb("rotation", 4)]
    assert feedback_accuracy(pred, gold[:4]) == 0.75
    assert feedback_accuracy([fb("no_error", 0)], [fb("no_error", 0)]) == 1.0
    assert feedback_accuracy([None], [gold[0]]) == 0.0
    with pytest.raises(LengthMismatch):
        feedback_accuracy(gold[:2], gold)


def test_rouge_examples():
    assert rouge_l("the cube is tilted", "the cube is tilted") == 1.0
    assert rouge_l("alpha beta", "gamma delta") == 0.0
    assert rouge_l("a b c", "a c d") == pytest.approx(2 / 3)
    assert rouge_l("", "a") == 0.0
    assert rouge_tokens("Block 3, Rotation!") == ["block", "3", "rotation"]


@given(st.lists(st.sampled_from("abcd"), max_size=9), st.lists(st.sampled_from("abcd"), max_size=9))
def test_lcs_matches_bruteforce(a, b):
    assert lcs_length(a, b) == lcs_bruteforce(a, b)


def test_report_table_scales_by_thousand():
    r = MetricsReport(0.00143, 0.002, 0.0005, 0.1, 0.7183, 0.5, 10)
    table = r.table()
    assert "1.430" in table and "2.000" in table and "0.500" in table and "71.83" in table
    assert r.to_json()["cd_mean"] == 0.00143
