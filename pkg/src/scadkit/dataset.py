"""Synthetic review datasets: procedural programs, injected errors, reference
views, template feedback, and evaluation of external predictions.

On-disk layout::

    out_dir/manifest.json
    out_dir/{split}_gold.jsonl
    out_dir/{split}/{sample_id}/correct.scad
    out_dir/{split}/{sample_id}/erroneous.scad
    out_dir/{split}/{sample_id}/record.json
    out_dir/{split}/{sample_id}/feedback.json
    out_dir/{split}/{sample_id}/views/ref_{0,1,2}.pgm
    out_dir/{split}/{sample_id}/views/rendered.pgm
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .csg import (
    CompileError,
    DegenerateGeometry,
    PointCloud,
    compile_source,
    evaluate,
    normalize,
    sample_surface,
    write_ply,
)
from .metrics import MetricsReport, chamfer, jsd, rouge_l
from .mutate import ERROR_TYPES, ErrorRecord, ErrorType, ExhaustedRetries, NotApplicable, applicable_types, mutate
from .render import depth_image, render, render_views, sample_views, silhouette_image, write_pgm
from .review import Candidate, FeedbackRecord, SchemaError, predefined_correct_feedback, read_jsonl
from .segment import annotate, segment
from .syntax import BOOLEANS, PRIMITIVES, Call, For, Program, parse, print_program, walk

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_FRACS = (0.8, 0.1, 0.1)
COMPLEXITY_WEIGHTS = {2: 0.15, 3: 0.25, 4: 0.3, 5: 0.3}
GEOMETRY_BLOCKS = {1: (1, 1), 2: (2, 3), 3: (3, 5), 4: (4, 8), 5: (6, 12)}
PRED_FIELDS = ("sample_id", "error_type", "block_id", "feedback", "edited_program")


class InvalidFractions(ValueError):
    pass


# --------------------------------------------------------------------------
# procedural programs


class _Writer:
    """Draws random parts for one synthetic program."""

    def __init__(self, rng: np.random.Generator, unit: float, macros: dict):
        self.rng = rng
        self.unit = unit
        self.macros = macros

    def r(self, lo: float, hi: float) -> float:
        return round(float(self.rng.uniform(lo, hi)) * self.unit, 1)

    def dim(self, lo: float = 0.6, hi: float = 2.0) -> str:
        # sometimes reference a numeric macro so constant edits have an effect
        numeric = [name for name, value in self.macros.items() if value not in ("true", "false")]
        if numeric and self.rng.random() < 0.4:
            name = numeric[int(self.rng.integers(len(numeric)))]
            k = round(float(self.rng.uniform(lo, hi)) * self.unit / float(self.macros[name]), 1)
            return name if k == 1.0 else f"{name} * {k:g}"
        return f"{self.r(lo, hi):g}"

    def position(self) -> str:
        x, y = self.r(-3, 3), self.r(-3, 3)
        z = self.r(0, 1.5)
        return f"[{x:g}, {y:g}, {z:g}]"

    def primitive(self) -> str:
        kind = self.rng.choice(["cube", "cube", "cylinder", "sphere"])
        if kind == "cube":
            if self.rng.random() < 0.5:
                return f"cube([{self.dim()}, {self.dim()}, {self.dim(0.3, 1.2)}])"
            return f"cube({self.dim()}, center=true)"
        if kind == "cylinder":
            return f"cylinder(h={self.dim(0.8, 2.5)}, r={self.dim(0.2, 0.7)})"
        return f"sphere(r={self.dim(0.3, 0.9)})"

    def rotation(self) -> str:
        if self.rng.random() < 0.3:
            axis = int(self.rng.integers(3))
            angles = ["0", "0", "0"]
            angles[axis] = str(int(self.rng.choice([15, 30, 45, 90])))
            return f"rotate([{', '.join(angles)}]) "
        return ""

    def placed(self) -> str:
        return f"translate({self.position()}) {self.rotation()}{self.primitive()};"

    def boolean(self) -> str:
        kind = self.rng.choice(["difference", "difference", "union", "intersection"])
        pos = self.position()
        if kind == "difference":
            a, b, c = self.r(1.5, 3), self.r(1.5, 3), self.r(0.4, 1.0)
            hole = round(min(a, b) * float(self.rng.uniform(0.15, 0.3)), 1)
            return (
                f"translate({pos}) difference() {{\n"
                f"    cube([{a:g}, {b:g}, {c:g}]);\n"
                f"    translate([{a / 2:g}, {b / 2:g}, -1]) cylinder(h={c + 2:g}, r={hole:g});\n"
                f"}}"
            )
        if kind == "union":
            a, h = self.r(1.0, 2.0), self.r(1.0, 2.5)
            return (
                f"translate({pos}) union() {{\n"
                f"    cube([{a:g}, {a:g}, {a / 2:g}]);\n"
                f"    translate([{a / 2:g}, {a / 2:g}, {a / 2:g}]) cylinder(h={h:g}, r={round(a / 4, 1):g});\n"
                f"}}"
            )
        a = self.r(1.0, 2.0)
        return (
            f"translate({pos}) intersection() {{\n"
            f"    cube({a:g}, center=true);\n"
            f"    sphere(r={round(a * 0.65, 2):g});\n"
            f"}}"
        )

    def loop(self) -> str:
        count = int(self.rng.integers(2, 5))
        step = "spacing" if "spacing" in self.macros else f"{self.r(0.8, 1.6):g}"
        start = self.position()
        body = self.primitive()
        return f"for (i = [0 : {count - 1}]) translate({start} + [i * {step}, 0, 0]) {body};"

    def conditional(self) -> str:
        return f"if (show_extra) translate({self.position()}) {self.primitive()};"


def _draw_source(seed: int, complexity: int, attempt: int) -> str:
    rng = np.random.default_rng([seed % (1 << 63), complexity, attempt])
    unit = float(rng.choice([4.0, 5.0, 6.0, 8.0, 10.0]))
    macros: dict[str, str] = {}
    if complexity >= 2:
        macros["unit"] = f"{unit:g}"
        if rng.random() < 0.5:
            macros["wall"] = f"{round(unit * 0.4, 1):g}"
        if complexity >= 4 and rng.random() < 0.5:
            macros["spacing"] = f"{round(unit * float(rng.uniform(0.8, 1.6)), 1):g}"
        if complexity >= 4:
            macros["show_extra"] = "true"
    writer = _Writer(rng, unit, macros)

    lo, hi = GEOMETRY_BLOCKS[complexity]
    count = int(rng.integers(lo, hi + 1))
    kinds = ["placed"] * count
    if complexity >= 3:
        kinds[0] = "boolean"
    if complexity >= 4:
        kinds[1] = "loop"
        kinds[2] = "conditional"
    for k in range(3 if complexity >= 4 else 1, count):
        if complexity >= 3 and rng.random() < 0.25:
            kinds[k] = "boolean"
    if complexity >= 5:
        kinds[-1] = "module_call"

    lines = [f"{name} = {value};" for name, value in macros.items()]
    if complexity >= 5:
        lines += [
            "module peg(height, radius=1) {",
            "    cylinder(h=height, r=radius);",
            "    translate([0, 0, height]) sphere(r=radius * 1.5);",
            "}",
        ]
    order = list(rng.permutation(count))
    for k in order:
        kind = kinds[k]
        if kind == "module_call":
            lines.append(f"translate({writer.position()}) peg({writer.r(1, 2):g}, {writer.r(0.15, 0.3):g});")
        else:
            lines.append(getattr(writer, kind)())
    return "\n".join(lines) + "\n"


def generate_synthetic_program(seed: int, complexity: int = 3) -> Program:
    """Random program of primitives, booleans and loops that always compiles.

    Complexity 1 is a single primitive; 2 adds macros and more parts; 3
    guarantees a boolean with nested children; 4 adds a loop and a
    conditional; 5 adds a module definition and call.
    """
    if complexity not in GEOMETRY_BLOCKS:
        raise ValueError("complexity must be 1..5")
    for attempt in range(100):
        source = _draw_source(seed, complexity, attempt)
        program = parse(source)
        try:
            sample_surface(evaluate(program), 256, 0)
        except (CompileError, DegenerateGeometry):
            continue
        return program
    raise RuntimeError("could not draw a valid program")  # pragma: no cover


# --------------------------------------------------------------------------
# samples


def _component(stmt) -> str:
    for s in walk(stmt):
        if isinstance(s, For):
            return "repeated row of parts"
        if isinstance(s, Call) and s.name in BOOLEANS:
            return f"{s.name} assembly"
        if isinstance(s, Call) and s.name in PRIMITIVES:
            return {"cube": "cuboid part", "sphere": "spherical part", "cylinder": "cylindrical part"}[s.name]
    return "component"


def describe_error(record: ErrorRecord, correct: Program) -> str:
    """Template feedback naming the visual anomaly, the erroneous block and the error type."""
    blocks = segment(correct)
    p = record.params
    bid = record.block_id
    try:
        part = _component(blocks.get(p.get("copied_block", bid)).main)
    except KeyError:
        part = "component"
    t = record.error_type
    if t is ErrorType.PRIMITIVE:
        return (f"The {p['from']} in the rendered model appears as a {p['to']} instead of the shape in the design "
                f"drawing. Block {bid} has a primitive error: it builds a {p['to']} where a {p['from']} is needed.")
    if t is ErrorType.ROTATION:
        return (f"The {part} in the rendered model is tilted compared with the design drawing. Block {bid} has a "
                f"rotation error: the {p['axis']}-axis rotation parameter is {p['angle']:g} degrees instead of "
                f"{p['previous']:g} degrees.")
    if t is ErrorType.POSITION:
        dx, dy, dz = p["offset"]
        return (f"The {part} is displaced from its place in the design drawing. Block {bid} has a position error: "
                f"the part is shifted by [{dx:g}, {dy:g}, {dz:g}] from the correct coordinates.")
    if t is ErrorType.SIZE:
        change = "larger" if p["factor"] > 1 else "smaller"
        return (f"The {p['primitive']} in the {part} looks {change} than in the design drawing. Block {bid} has a "
                f"size error: its {p['argument']} value is scaled by {p['factor']:g}.")
    if t is ErrorType.CONSTANT:
        return (f"Several parts in the rendered model differ in proportion or presence from the design drawing. "
                f"Block {bid} has a constant error: the macro {p['name']} is {_show(p['new'])} instead of "
                f"{_show(p['previous'])}.")
    if t is ErrorType.LOGIC:
        if p["statement"] == "if":
            return (f"A {part} that depends on a condition is missing or extra compared with the design drawing. "
                    f"Block {bid} has a logic error: the if condition is inverted.")
        return (f"The repeated parts of the {part} do not match the count or spacing in the design drawing. "
                f"Block {bid} has a logic error: the loop range {p['field']} is off by {p['delta']}.")
    if t is ErrorType.MISSING_BLOCK:
        return (f"The {part} shown in the design drawing is absent from the rendered model. Block {bid} has a "
                f"missing block error: the code that builds this part was removed.")
    if t is ErrorType.REDUNDANT_BLOCK:
        return (f"An extra {part} appears in the rendered model that is not in the design drawing. Block {bid} has "
                f"a redundant block error: it duplicates block {p['copied_block']} and should be deleted.")
    raise ValueError(f"no template for {t}")


def _show(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


@lru_cache(maxsize=4)
def _references(correct_text: str, view_seed: int, size: int):
    # every sample of one source shares its cameras and reference views
    node = compile_source(correct_text)
    views = sample_views(view_seed, node, size)
    return views, render_views(node, views)


@dataclass
class Sample:
    id: str
    correct_program: str
    erroneous_program: str
    error: ErrorRecord
    feedback: FeedbackRecord
    reference_views: list = field(default_factory=list)
    rendered_view: Optional[str] = None
    split: str = "train"
    source_id: str = ""

    def gold_row(self) -> dict:
        row = self.feedback.to_json()
        row.update(correct_program=self.correct_program, erroneous_program=self.erroneous_program,
                   split=self.split, source_id=self.source_id)
        return row


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def build_sample(source: Program, error_type, seed: int, sample_id: str = "sample", out_dir=None,
                 size: int = 128, view_seed: Optional[int] = None, split: str = "train",
                 source_id: str = "") -> Sample:
    """Annotate, mutate, render and describe one sample.

    Reference views come from the correct program; the rendered view shows
    the erroneous program from the first reference camera. Files are written
    under ``out_dir`` when given.
    """
    error_type = ErrorType.parse(error_type)
    correct = annotate(source)
    views, refs = _references(print_program(correct), seed if view_seed is None else view_seed, size)

    erroneous, record = mutate(correct, error_type, seed)
    if error_type is ErrorType.NO_ERROR:
        text = predefined_correct_feedback(seed)
    else:
        text = describe_error(record, correct)
    feedback = FeedbackRecord(sample_id, error_type, record.block_id, text)
    sample = Sample(sample_id, print_program(correct), print_program(erroneous), record, feedback,
                    split=split, source_id=source_id)

    if out_dir is not None:
        root = Path(out_dir)
        (root / "views").mkdir(parents=True, exist_ok=True)
        (root / "correct.scad").write_text(sample.correct_program, encoding="utf-8")
        (root / "erroneous.scad").write_text(sample.erroneous_program, encoding="utf-8")
        _dump(root / "record.json", record.to_json())
        _dump(root / "feedback.json", feedback.to_json())
        for k, raster in enumerate(refs):
            write_pgm(root / "views" / f"ref_{k}.pgm", silhouette_image(raster))
            write_pgm(root / "views" / f"ref_{k}_depth.pgm", depth_image(raster))
        rendered = render(evaluate(erroneous), views.cameras[0])
        write_pgm(root / "views" / "rendered.pgm", silhouette_image(rendered))
        sample.reference_views = [f"views/ref_{k}.pgm" for k in range(3)]
        sample.rendered_view = "views/rendered.pgm"
    return sample


# --------------------------------------------------------------------------
# datasets


@dataclass
class DatasetManifest:
    samples: list
    seed: int
    counts: dict
    histogram: dict
    n_sources: int = 0
    split_fracs: tuple = DEFAULT_FRACS
    skipped: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_sources": self.n_sources,
            "split_fracs": list(self.split_fracs),
            "counts": self.counts,
            "histogram": self.histogram,
            "samples": self.samples,
            "skipped": self.skipped,
        }

    def digest(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["samples"], data["seed"], data["counts"], data["histogram"], data["n_sources"],
                   tuple(data["split_fracs"]), data.get("skipped", []))


def assign_splits(n_sources: int, seed: int, fracs: Sequence[float] = DEFAULT_FRACS) -> list[str]:
    """Split label per source index; every sample of a source shares its label."""
    fracs = tuple(float(f) for f in fracs)
    if len(fracs) != 3 or any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise InvalidFractions(f"split fractions must be three non-negative numbers summing to 1, got {fracs}")
    order = np.random.default_rng([seed % (1 << 63), 7]).permutation(n_sources)
    n_train = int(round(fracs[0] * n_sources))
    n_val = min(int(round(fracs[1] * n_sources)), n_sources - n_train)
    labels = [""] * n_sources
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return labels


def _source_job(args):
    index, source_seed, complexity, split, out_dir, size = args
    source_id = f"src{index:05d}"
    program = generate_synthetic_program(source_seed, complexity)
    types = [t for t in ERROR_TYPES if t in applicable_types(program)] + [ErrorType.NO_ERROR]
    rows, skipped = [], []
    for t in types:
        sample_id = f"{source_id}_{t.value}"
        target = None if out_dir is None else Path(out_dir) / split / sample_id
        try:
            sample = build_sample(program, t, source_seed, sample_id, target, size=size,
                                  view_seed=source_seed, split=split, source_id=source_id)
        except (ExhaustedRetries, NotApplicable) as exc:
            skipped.append({"sample_id": sample_id, "reason": type(exc).__name__})
            continue
        rows.append((sample, {
            "id": sample_id,
            "source_id": source_id,
            "split": split,
            "error_type": t.value,
            "block_id": sample.error.block_id,
            "complexity": complexity,
            "path": f"{split}/{sample_id}",
        }))
    return rows, skipped


def build_dataset(n_sources: int, seed: int = 0, split_fracs: Sequence[float] = DEFAULT_FRACS,
                  out_dir=None, size: int = 128, jobs: int = 1) -> DatasetManifest:
    """Generate sources, split them object-disjointly and expand each into samples.

    Each source yields one sample per applicable error type whose mutation
    succeeds, plus one no-error sample.
    """
    splits = assign_splits(n_sources, seed, split_fracs)
    ss = np.random.SeedSequence(seed % (1 << 63))
    source_seeds = [int(x) for x in ss.generate_state(n_sources, dtype=np.uint32)]
    crng = np.random.default_rng([seed % (1 << 63), 11])
    levels = list(COMPLEXITY_WEIGHTS)
    probs = np.array(list(COMPLEXITY_WEIGHTS.values()))
    complexities = [int(c) for c in crng.choice(levels, size=n_sources, p=probs / probs.sum())]
    jobs_args = [(i, source_seeds[i], complexities[i], splits[i], None if out_dir is None else str(out_dir), size)
                 for i in range(n_sources)]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_source_job, jobs_args))
    else:
        results = [_source_job(a) for a in jobs_args]

    samples, entries, skipped = [], [], []
    for rows, skips in results:
        for sample, entry in rows:
            samples.append(sample)
            entries.append(entry)
        skipped.extend(skips)
    counts = {s: sum(e["split"] == s for e in entries) for s in SPLITS}
    histogram = {t.value: sum(e["error_type"] == t.value for e in entries) for t in ErrorType}
    manifest = DatasetManifest(entries, seed, counts, histogram, n_sources, tuple(split_fracs), skipped)

    if out_dir is not None:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        _dump(root / "manifest.json", manifest.to_json())
        for split in SPLITS:
            with open(root / f"{split}_gold.jsonl", "w", encoding="utf-8") as fh:
                for sample in samples:
                    if sample.split == split:
                        fh.write(json.dumps(sample.gold_row(), sort_keys=True) + "\n")
    log.info("built %d samples from %d sources", len(entries), n_sources)
    return manifest


# --------------------------------------------------------------------------
# evaluation


def load_predictions(path) -> dict[str, dict]:
    preds: dict[str, dict] = {}
    for row in read_jsonl(path):
        missing = [f for f in PRED_FIELDS if f not in row]
        if missing:
            raise SchemaError(f"prediction {row.get('sample_id')!r} lacks {missing}")
        if not isinstance(row["feedback"], str) or not isinstance(row["edited_program"], (str, type(None))):
            raise SchemaError(f"prediction {row['sample_id']!r} has non-text feedback or program")
        sid = str(row["sample_id"])
        if sid in preds:
            raise SchemaError(f"duplicate prediction for {sid!r}")
        preds[sid] = row
    return preds


def _trees(clouds):
    return [cKDTree(c.points) for c in clouds]


def _mmd_cached(reference: list[PointCloud], generated: list[PointCloud]) -> float:
    ref_trees, gen_trees = _trees(reference), _trees(generated)
    total = 0.0
    for y, ty in zip(reference, ref_trees):
        best = math.inf
        for g, tg in zip(generated, gen_trees):
            d1 = ty.query(g.points)[0]
            d2 = tg.query(y.points)[0]
            best = min(best, float(np.mean(d1 ** 2) + np.mean(d2 ** 2)))
        total += best
    return total / len(reference)


def evaluate_predictions(preds: dict[str, dict], gold_rows: Sequence[dict], n_points: int = 2048,
                         seed: int = 0, jsd_resolution: int = 16, clouds_dir=None) -> MetricsReport:
    """Score predictions against gold rows (``sample_id``, ``error_type``,
    ``block_id``, ``feedback``, ``correct_program``).

    Missing predictions count as wrong feedback and invalid programs. CD is
    the mean over valid edits, each measured in its gold cloud's frame.
    """
    if not gold_rows:
        raise ValueError("no gold samples to evaluate")
    hits, rouge, invalid = 0, 0.0, 0
    cds, gold_clouds, pred_clouds = [], [], []
    if clouds_dir is not None:
        Path(clouds_dir).mkdir(parents=True, exist_ok=True)
    for row in gold_rows:
        gold = FeedbackRecord.from_json(row)
        gold_cloud = normalize(sample_surface(compile_source(row["correct_program"]), n_points, seed))
        gold_clouds.append(gold_cloud)
        pred = preds.get(gold.sample_id)
        if pred is None:
            invalid += 1
            continue
        cand = Candidate.from_json(pred)
        fb = cand.feedback
        if fb is not None and fb.block_id == gold.block_id and fb.error_type == gold.error_type:
            hits += 1
        rouge += rouge_l(cand.text, gold.description)
        try:
            raw = sample_surface(compile_source(pred["edited_program"] or ""), n_points, seed)
        except (CompileError, DegenerateGeometry):
            invalid += 1
            continue
        cloud = normalize(raw, gold_cloud)
        pred_clouds.append(cloud)
        cds.append(chamfer(cloud, gold_cloud))
        if clouds_dir is not None:
            write_ply(Path(clouds_dir) / f"{gold.sample_id}_gold.ply", gold_cloud)
            write_ply(Path(clouds_dir) / f"{gold.sample_id}_pred.ply", cloud)

    n = len(gold_rows)
    if pred_clouds:
        cd_mean = float(np.mean(cds))
        mmd_value = _mmd_cached(gold_clouds, pred_clouds)
        jsd_value = jsd(gold_clouds, pred_clouds, jsd_resolution)
    else:
        cd_mean = mmd_value = jsd_value = math.nan
    return MetricsReport(cd_mean, mmd_value, jsd_value, invalid / n, hits / n, rouge / n, n)


def load_gold(path) -> list[dict]:
    return read_jsonl(path)


def run_eval(pred_file, manifest, split: str = "test", **kwargs) -> MetricsReport:
    """Evaluate a prediction JSONL file against one split of a built dataset."""
    manifest_path = Path(manifest)
    gold_rows = load_gold(manifest_path.parent / f"{split}_gold.jsonl")
    return evaluate_predictions(load_predictions(pred_file), gold_rows, **kwargs)
