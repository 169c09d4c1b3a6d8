"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances and runtime limits are pinned as module constants.
"""

import math
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
from hypothesis import HealthCheck, given, settings

from scadkit.csg import (
    Boolean, Cube, Cylinder, PointCloud, Sphere, Transform, bounds, compile_source, contains, evaluate, normalize,
    sample_surface, translation,
)
from scadkit.dataset import build_dataset, evaluate_predictions, generate_synthetic_program, load_gold
from scadkit.metrics import chamfer, invalid_ratio, jsd, mmd
from scadkit.mutate import VIS_DELTA, VIS_POINTS, ErrorType, ExhaustedRetries, applicable_types, mutate
from scadkit.quantize import dequantize_value, quantize_value
from scadkit.render import Camera, render
from scadkit.review import (
    Candidate, CandidateSet, build_dpo_pairs, candidate_cloud, diagnostic_reward, pointcloud_reward,
)
from scadkit.segment import annotate, segment
from scadkit.syntax import parse, print_program, strip_annotations

from cases import CORPUS, HAND_LABELED, disc_iou, random_candidate_set, rec
from oracles import (
    chamfer_bruteforce, cube_volume, dpo_filter_bruteforce, frustum_volume, grid_cells, membership_bruteforce,
    sphere_volume,
)
from strategies import programs

E = ErrorType

LIMIT_METRICS_S = 1.0
LIMIT_CHAMFER_S = 30.0
LIMIT_CSG_S = 180.0
LIMIT_MUTATION_S = 300.0
LIMIT_BUILD_S = 300.0

CHAMFER_TOL = 1e-12
VOLUME_REL_TOL = 0.02
MEMBERSHIP_AGREEMENT = 0.999
ANNOTATION_CD_TOL = 1e-9
SPHERE_IOU = 0.98
GOLD_CD_SCALED_MAX = 1.0


@contextmanager
def criterion(capsys, number: int, name: str):
    """Run a criterion body and print one PASS/FAIL line whatever happens."""
    start = time.perf_counter()
    status = "FAIL"
    detail = {}
    try:
        yield detail
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        extra = " ".join(f"{k}={v}" for k, v in detail.items())
        with capsys.disabled():
            print(f"\n[{status}] criterion {number:2d} {name}: {elapsed:.1f}s {extra}".rstrip())


# 1 ------------------------------------------------------------------------


def test_c01_metric_formulas(capsys):
    with criterion(capsys, 1, "metric formulas") as d:
        start = time.perf_counter()
        assert chamfer([[0.0, 0, 0]], [[1.0, 0, 0]]) == 2.0
        s = [PointCloud(np.random.default_rng(k).random((64, 3))) for k in range(3)]
        assert mmd(s, s) == 0.0
        assert jsd(s, s) < 1e-12
        a = [PointCloud(np.full((10, 3), 0.1))]
        b = [PointCloud(np.full((10, 3), 0.9))]
        assert abs(jsd(a, b) - math.log(2)) <= 1e-9
        assert invalid_ratio(["cube(1);", "sphere(2);", "cube((", "cylinder(h=1, r=1);"]) == 0.25
        d["runtime_s"] = round(time.perf_counter() - start, 3)
        assert time.perf_counter() - start < LIMIT_METRICS_S


# 2 ------------------------------------------------------------------------


def test_c02_chamfer_bruteforce(capsys):
    with criterion(capsys, 2, "chamfer equals brute force") as d:
        start = time.perf_counter()
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(100):
            p = rng.uniform(-1, 1, (int(rng.integers(1, 513)), 3))
            q = rng.uniform(-1, 1, (int(rng.integers(1, 513)), 3))
            worst = max(worst, abs(chamfer(p, q) - chamfer_bruteforce(p, q)))
        d["max_abs_err"] = f"{worst:.1e}"
        assert worst <= CHAMFER_TOL
        assert time.perf_counter() - start < LIMIT_CHAMFER_S


# 3 ------------------------------------------------------------------------


def _mc_volume(node, n=400_000, seed=3):
    lo, hi = bounds(node)
    pts = np.random.default_rng(seed).uniform(lo, hi, (n, 3))
    return contains(node, pts).mean() * float(np.prod(hi - lo))


def test_c03_csg_oracle(capsys):
    with criterion(capsys, 3, "CSG volumes and membership") as d:
        start = time.perf_counter()
        shapes = {
            "cube": (Cube((2.0, 3.0, 4.0), False), cube_volume(2, 3, 4)),
            "sphere": (Sphere(1.5), sphere_volume(1.5)),
            "cylinder": (Cylinder(3.0, 1.0, 1.0, True), frustum_volume(3.0, 1.0, 1.0)),
            "cube-sphere": (Boolean("difference", (Cube((2.0, 2.0, 2.0), True), Sphere(1.2))),
                            cube_volume(2, 2, 2) - (sphere_volume(1.2) - 6 * math.pi * 0.2 ** 2 * (3 * 1.2 - 0.2) / 3)),
        }
        for name, (node, exact) in shapes.items():
            rel = abs(_mc_volume(node) - exact) / exact
            d[f"{name}_rel"] = f"{rel:.4f}"
            assert rel <= VOLUME_REL_TOL, name
        worst = 1.0
        for seed in range(50):
            node = evaluate(generate_synthetic_program(seed, 2 + seed % 4))
            pts = grid_cells(*bounds(node), resolution=64)
            worst = min(worst, float(np.mean(contains(node, pts) == membership_bruteforce(node, pts))))
        d["min_agreement"] = f"{worst:.5f}"
        assert worst >= MEMBERSHIP_AGREEMENT
        assert time.perf_counter() - start < LIMIT_CSG_S


# 4 ------------------------------------------------------------------------


def _structure(program):
    return program.statements, program.trailing_comments


def test_c04_round_trip(capsys):
    with criterion(capsys, 4, "parser round trip") as d:
        failures = 0
        for source in CORPUS:
            p1 = parse(source)
            failures += _structure(parse(print_program(p1))) != _structure(p1)
        for seed in range(200):
            p1 = parse(print_program(generate_synthetic_program(seed, 1 + seed % 5)))
            failures += _structure(parse(print_program(p1))) != _structure(p1)

        @settings(max_examples=200, derandomize=True, database=None, deadline=None,
                  suppress_health_check=list(HealthCheck))
        @given(programs)
        def random_asts(program):
            p1 = parse(print_program(program))
            assert _structure(parse(print_program(p1))) == _structure(p1)

        random_asts()
        d["programs"] = len(CORPUS) + 400
        d["failures"] = failures
        assert failures == 0


# 5 ------------------------------------------------------------------------


def test_c05_segmentation(capsys):
    with criterion(capsys, 5, "segmentation semantics") as d:
        worst = 0.0
        for seed in range(100):
            program = parse(print_program(generate_synthetic_program(seed, 1 + seed % 5)))
            annotated = parse(print_program(annotate(program)))
            a = sample_surface(evaluate(program), 1024, seed)
            b = sample_surface(evaluate(annotated), 1024, seed)
            worst = max(worst, chamfer(a, b))
            blocks = segment(annotated)
            flat = [strip_annotations(s) for blk in blocks for s in blk.statements]
            assert flat == list(program.statements)
            assert [blk.id for blk in blocks] == list(range(1, len(blocks) + 1))
        d["max_cd"] = f"{worst:.1e}"
        assert worst < ANNOTATION_CD_TOL


# 6 ------------------------------------------------------------------------


def test_c06_mutation_suite(capsys):
    with criterion(capsys, 6, "mutation suite") as d:
        start = time.perf_counter()
        emitted, skipped, min_cd = 0, 0, math.inf
        sources = []
        for seed in range(50):
            program = annotate(generate_synthetic_program(1000 + seed, 2 + seed % 4))
            before = segment(program)
            old = {b.id: b.text() for b in before}
            ref = normalize(sample_surface(evaluate(program), VIS_POINTS, 0))
            for t in sorted(applicable_types(program) - {E.NO_ERROR}, key=lambda t: t.value):
                try:
                    mutant, record = mutate(program, t, seed)
                except ExhaustedRetries:
                    skipped += 1
                    continue
                emitted += 1
                sources.append(print_program(mutant))
                after = segment(mutant)
                new = {b.id: b.text() for b in after}
                if t is E.MISSING_BLOCK:
                    assert len(after) == len(before) - 1
                elif t is E.REDUNDANT_BLOCK:
                    assert len(after) == len(before) + 1 and all(new[k] == old[k] for k in old)
                else:
                    assert [k for k in old if old[k] != new.get(k)] == [record.block_id], t
                other = normalize(sample_surface(evaluate(mutant), VIS_POINTS, 0), ref)
                min_cd = min(min_cd, chamfer(ref, other))
        d.update(emitted=emitted, skipped=skipped, min_cd=f"{min_cd:.2e}")
        assert invalid_ratio(sources) == 0.0
        assert min_cd > VIS_DELTA
        assert time.perf_counter() - start < LIMIT_MUTATION_S


# 7 ------------------------------------------------------------------------


def test_c07_quantization(capsys):
    with criterion(capsys, 7, "quantization") as d:
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(1000):
            lo = float(rng.uniform(-100, 100))
            hi = lo + float(rng.uniform(1e-3, 200))
            v = float(rng.uniform(lo, hi))
            err = abs(dequantize_value(quantize_value(v, lo, hi), lo, hi) - v) / ((hi - lo) / 512)
            worst = max(worst, err)
            assert quantize_value(hi, lo, hi) == 256
        d["max_err_over_bound"] = f"{worst:.4f}"
        assert worst <= 1.0 + 1e-9


# 8 ------------------------------------------------------------------------


def _index_pairs(pairs, cs):
    index = {c.text: i for i, c in enumerate(cs.candidates)}
    return {(index[p.chosen.text], index[p.rejected.text]) for p in pairs}


def test_c08_reward_harness(capsys):
    with criterion(capsys, 8, "reward and pair harness") as d:
        hits = sum(diagnostic_reward(pred, gold) == want for pred, gold, want in HAND_LABELED)
        d["hand_labeled"] = f"{hits}/{len(HAND_LABELED)}"
        assert len(HAND_LABELED) == 20 and hits == 20

        rng = np.random.default_rng(8)
        gold = rec("rotation", 2)
        for _ in range(50):
            cs = random_candidate_set(rng, int(rng.integers(2, 9)))
            vd = [diagnostic_reward(c.feedback, gold) for c in cs.candidates]
            vv = [c.visual_reward for c in cs.candidates]
            for mode in ("and", "or"):
                assert _index_pairs(build_dpo_pairs(cs, gold, mode), cs) == dpo_filter_bruteforce(vd, vv, mode)

        gold_src = "difference() { cube([3, 2, 2]); translate([1.5, 1, -1]) cylinder(h=4, r=0.5); }"
        gold_cloud = normalize(sample_surface(compile_source(gold_src), 512, 0))
        edits = [gold_src.replace("r=0.5", f"r={r}") for r in (0.2, 0.4, 0.5, 0.7, 0.9)] + ["cube([3, 2, 5]);"]
        cs = CandidateSet("s1", tuple(Candidate(None, f"c{k}", e) for k, e in enumerate(edits)))
        ranking = dict(pointcloud_reward(cs, gold_cloud, n=512, seed=0))
        scored = CandidateSet("s1", tuple(replace(c, cd=ranking[k]) for k, c in enumerate(cs.candidates)))
        (pair,) = build_dpo_pairs(scored, gold, "pointcloud")
        oracle = [chamfer_bruteforce(candidate_cloud(e, gold_cloud, 512, 0).points, gold_cloud.points) for e in edits]
        assert pair.chosen.text == f"c{int(np.argmin(oracle))}"
        assert pair.rejected.text == f"c{int(np.argmax(oracle))}"
        d["pointcloud_pair"] = f"{pair.chosen.text}>{pair.rejected.text}"


# 9 ------------------------------------------------------------------------


def test_c09_renderer(capsys):
    with criterion(capsys, 9, "renderer") as d:
        iou, _ = disc_iou(256)
        d["sphere_iou"] = f"{iou:.4f}"
        assert iou >= SPHERE_IOU
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = Transform(translation(rng.uniform(-1, 1, 3)), Cube(tuple(rng.uniform(0.3, 2, 3)), True))
            b = Transform(translation(rng.uniform(-1, 1, 3)), Sphere(float(rng.uniform(0.2, 1.2))))
            eye = rng.normal(size=3)
            cam = Camera(tuple(6 * eye / np.linalg.norm(eye)), (0.0, 0.0, 0.0), width=64, height=64)
            union = render(Boolean("union", (a, b)), cam).silhouette
            assert np.all(union[render(a, cam).silhouette]) and np.all(union[render(b, cam).silhouette])
        d["monotone_pairs"] = 20


# 10 -----------------------------------------------------------------------


def test_c10_end_to_end(capsys, tmp_path):
    with criterion(capsys, 10, "end to end") as d:
        start = time.perf_counter()
        first = build_dataset(100, seed=0, out_dir=tmp_path / "a")
        build_s = time.perf_counter() - start
        second = build_dataset(100, seed=0, out_dir=tmp_path / "b")
        d.update(build_s=round(build_s, 1), samples=len(first.samples), sha=first.digest()[:12])
        assert build_s < LIMIT_BUILD_S
        assert first.digest() == second.digest()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()

        rows = load_gold(tmp_path / "a" / "test_gold.jsonl")
        preds = {r["sample_id"]: {"sample_id": r["sample_id"], "error_type": r["error_type"],
                                  "block_id": r["block_id"], "feedback": r["feedback"],
                                  "edited_program": r["correct_program"]} for r in rows}
        report = evaluate_predictions(preds, rows)
        d.update(acc=report.feedback_acc, ir=report.ir, cd_x1e3=f"{report.cd_mean * 1e3:.3f}")
        assert report.feedback_acc == 1.0 and report.ir == 0.0
        assert report.cd_mean * 1e3 < GOLD_CD_SCALED_MAX

