import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scadkit.csg import PointCloud, compile_source, normalize, sample_surface
from scadkit.metrics import feedback_accuracy
from scadkit.mutate import ErrorType
from scadkit.render import Raster, render, sample_views
from scadkit.review import (
    PREDEFINED_CORRECT_FEEDBACK, Candidate, CandidateSet, FeedbackRecord, SampleMismatch, SchemaError,
    ShapeMismatch, build_dpo_pairs, diagnostic_reward, group_candidates, parse_block_id, pointcloud_reward,
    predefined_correct_feedback, rank_by_chamfer, read_jsonl, visual_reward,
)

from cases import HAND_LABELED, cand, random_candidate_set, rec
from oracles import chamfer_bruteforce, dpo_filter_bruteforce

E = ErrorType


# -- records ----------------------------------------------------------------


def test_record_invariants():
    with pytest.raises(ValueError):
        FeedbackRecord("s", E.SIZE, 2, "  ")
    with pytest.raises(ValueError):
        FeedbackRecord("s", E.NO_ERROR, 3, "fine")


def test_record_coerces_error_type():
    assert FeedbackRecord("s", "size", 2, "x").error_type is E.SIZE
    with pytest.raises(ValueError):
        FeedbackRecord("s", "sizing", 2, "x")


def test_block_id_parsing():
    assert parse_block_id(3) == 3
    assert parse_block_id("Block 4") == 4
    assert parse_block_id("block id: 7") == 7
    assert parse_block_id("the third one") is None
    assert parse_block_id(True) is None


def test_candidate_from_free_text_only_is_unparseable():
    c = Candidate.from_json({"sample_id": "s1", "feedback": "Block 2 has a rotation error."})
    assert c.feedback is None
    assert diagnostic_reward(c.feedback, rec()) == 0


def test_read_jsonl_rejects_bad_rows(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"sample_id": "a"}\nnot json\n')
    with pytest.raises(SchemaError):
        read_jsonl(path)
    path.write_text('{"feedback": "x"}\n')
    with pytest.raises(SchemaError):
        read_jsonl(path)


# -- diagnostic reward ------------------------------------------------------




@pytest.mark.parametrize("pred, gold, expected", HAND_LABELED)
def test_diagnostic_reward(pred, gold, expected):
    assert diagnostic_reward(pred, gold) == expected
    if pred is not None:
        assert feedback_accuracy([pred], [gold]) == expected


def test_diagnostic_reward_sample_mismatch():
    with pytest.raises(SampleMismatch):
        diagnostic_reward(rec(sid="a"), rec(sid="b"))


# -- visual reward ----------------------------------------------------------


def _views(source, size=48):
    node = compile_source(source)
    vs = sample_views(0, node, size)
    return [render(node, c) for c in vs.cameras]


def test_visual_reward_identity_and_inverse():
    refs = _views("difference() { cube(2, center=true); sphere(1.2); }")
    assert visual_reward(refs, refs) == pytest.approx(1.0)
    inverse = [Raster(~r.silhouette, r.depth) for r in refs]
    assert visual_reward(refs, inverse) < 0.1


def test_visual_reward_constant_embedder():
    class Constant:
        def embed(self, rasters):
            return np.ones(4)

    refs = _views("cube(1);")
    other = _views("sphere(3);")
    assert visual_reward(refs, other, Constant()) == 1.0


def test_visual_reward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        visual_reward(_views("cube(1);", 32), _views("cube(1);", 48))
    with pytest.raises(ShapeMismatch):
        visual_reward(_views("cube(1);")[:2], _views("cube(1);"))


# -- point-cloud reward -----------------------------------------------------


def test_pointcloud_reward_ranking():
    gold_src = "cube([3, 2, 1]);"
    gold = normalize(sample_surface(compile_source(gold_src), 512, 0))
    cands = CandidateSet("s1", (
        Candidate(None, edited_program="cube([3, 2, 4]);"),
        Candidate(None, edited_program="cube(("),
        Candidate(None, edited_program=gold_src),
    ))
    ranking = pointcloud_reward(cands, gold, n=512, seed=0)
    assert ranking[0] == (2, 0.0)
    assert ranking[-1][0] == 1 and math.isinf(ranking[-1][1])


def test_rank_by_chamfer_hand_values():
    gold = PointCloud(np.array([[0.0, 0, 0]]))
    a = PointCloud(np.array([[0.5, 0, 0]]))  # 0.25 + 0.25
    b = PointCloud(np.array([[1.0, 0, 0]]))  # 1 + 1
    assert chamfer_bruteforce(a.points, gold.points) == 0.5
    assert chamfer_bruteforce(b.points, gold.points) == 2.0
    assert rank_by_chamfer([b, None, a], gold) == [(2, 0.5), (0, 2.0), (1, math.inf)]


def test_rank_invariant_under_rescaling():
    rng = np.random.default_rng(0)
    gold = rng.random((50, 3))
    clouds = [gold + rng.normal(scale=s, size=gold.shape) for s in (0.3, 0.01, 0.1)]
    order = [i for i, _ in rank_by_chamfer([PointCloud(c) for c in clouds], PointCloud(gold))]
    scaled = [i for i, _ in rank_by_chamfer([PointCloud(3 * c) for c in clouds], PointCloud(3 * gold))]
    assert order == scaled == [1, 2, 0]


# -- pairs ------------------------------------------------------------------


def test_pair_example_kept():
    gold = rec()
    cs = CandidateSet("s1", (cand("rotation", 2, 0.9), cand("size", 2, 0.5)))
    (pair,) = build_dpo_pairs(cs, gold)
    assert pair.chosen.visual_reward == 0.9
    assert pair.rewards["v_d_chosen"] == 1 and pair.rewards["v_d_rejected"] == 0
    assert json.loads(json.dumps(pair.to_json()))["prompt_id"] == "s1"


def test_pair_both_wrong():
    cs = CandidateSet("s1", (cand("size", 2, 0.9), cand("size", 3, 0.1)))
    assert build_dpo_pairs(cs, rec(), "and") == []


def test_pointcloud_mode():
    cds = [0.8, 0.1, 2.5, 0.4, 1.1, 0.05, 0.9, 3.0]
    cs = CandidateSet("s1", tuple(cand("size", 2, 0.0, text=f"c{k}", cd=c) for k, c in enumerate(cds)))
    (pair,) = build_dpo_pairs(cs, rec(), "pointcloud")
    assert pair.chosen.text == "c5" and pair.rejected.text == "c7"


def _as_indices(pairs, cs):
    index = {c.text: i for i, c in enumerate(cs.candidates)}
    return {(index[p.chosen.text], index[p.rejected.text]) for p in pairs}


@pytest.mark.parametrize("mode", ["and", "or"])
def test_pairs_match_bruteforce(mode):
    rng = np.random.default_rng(42)
    gold = rec("rotation", 2)
    for _ in range(30):
        cs = random_candidate_set(rng, int(rng.integers(2, 9)))
        vd = [diagnostic_reward(c.feedback, gold) for c in cs.candidates]
        vv = [c.visual_reward for c in cs.candidates]
        assert _as_indices(build_dpo_pairs(cs, gold, mode), cs) == dpo_filter_bruteforce(vd, vv, mode)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.randoms(use_true_random=False))
def test_pairs_permutation_invariant_and_and_subset_or(seed, shuffler):
    rng = np.random.default_rng(seed)
    cs = random_candidate_set(rng, 8)
    gold = rec("rotation", 2)
    shuffled = list(cs.candidates)
    shuffler.shuffle(shuffled)
    cs2 = CandidateSet("s1", tuple(shuffled))
    key = lambda ps: {(p.chosen.text, p.rejected.text) for p in ps}
    assert key(build_dpo_pairs(cs, gold, "and")) == key(build_dpo_pairs(cs2, gold, "and"))
    assert key(build_dpo_pairs(cs, gold, "and")) <= key(build_dpo_pairs(cs, gold, "or"))
    assert build_dpo_pairs(cs, gold, "or") == build_dpo_pairs(cs, gold, "or")


def test_group_candidates():
    rows = [{"sample_id": "a", "error_type": "size", "block_id": 2, "feedback": "x"},
            {"sample_id": "b", "error_type": "size", "block_id": 2, "feedback": "y"},
            {"sample_id": "a", "error_type": "logic", "block_id": "Block 3", "feedback": "z"}]
    groups = group_candidates(rows)
    assert len(groups["a"]) == 2 and groups["a"].candidates[1].feedback.block_id == 3


# -- predefined feedback ----------------------------------------------------


def test_predefined_feedback():
    assert len(PREDEFINED_CORRECT_FEEDBACK) == 10
    assert predefined_correct_feedback(5) in PREDEFINED_CORRECT_FEEDBACK
    assert predefined_correct_feedback(5) == predefined_correct_feedback(5)
    seen = {predefined_correct_feedback(s) for s in range(10_000)}
    assert seen == set(PREDEFINED_CORRECT_FEEDBACK)
