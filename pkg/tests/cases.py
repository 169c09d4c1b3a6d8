"""Shared test data: the grammar corpus, hand-labeled reward cases and small builders."""

import math

import numpy as np

from scadkit.csg import Sphere
from scadkit.mutate import ErrorType
from scadkit.render import Camera, render
from scadkit.review import Candidate, CandidateSet, FeedbackRecord

E = ErrorType

# hand-written grammar corpus: every construct of the supported subset
CORPUS = [
    "cube(10);",
    "x = 1 + 2 * 3;",
    "translate([0,0,5]) cube([2,2,2], center=true);",
    "for (i = [0:2]) sphere(r=i);",
    "for (i = [0 : 0.5 : 3]) translate([i, 0, 0]) cylinder(h=2, r1=1, r2=0.5);",
    "for (k = [1, 2, 5]) cube(k);",
    "r=5; cube(r); sphere(r);",
    "difference(){cube(4);sphere(3);}",
    "union() { cube(1); translate([2,0,0]) { sphere(1); cylinder(h=1, r=1, center=true); } }",
    "intersection() { cube(2, center=true); sphere(r=1.3); }",
    "module peg(h, r=1) { cylinder(h=h, r=r); translate([0,0,h]) sphere(r); }\npeg(5);",
    "flag = true;\nif (flag && !false) cube(1); else sphere(2);",
    "if (a < b || a >= 3) { cube(1); } else if (a == 2) { sphere(1); }",
    "a = -b + -(3 * c) % 2;\ncube(1);",
    "rotate([0, 0, 45]) scale([1, 2, 1]) mirror([1, 0, 0]) cube([1, 2, 3]);",
    "rotate(a=30) cube(1);",
    "// Block 1\nsize = 4;\n// Block 2\ncube(size);",
    "/* header\n   comment */\ncube(1); // trailing\n",
    "v = [1, [2, 3], []];\ncube(1);",
    "e = 1e-3 + .5 + 2.;\ncube(1);",
    "{ cube(1); }",
    "cube(1);\r\nsphere(2);\r\n",
]


def rec(t="rotation", b=2, sid="s1", text="Block 2 is rotated."):
    return FeedbackRecord(sid, E(t), b, text)


HAND_LABELED = [
    (rec(), rec(), 1),
    (rec(t="size"), rec(), 0),
    (rec(b=3), rec(), 0),
    (rec(t="size", b=3), rec(), 0),
    (rec("no_error", 0), rec("no_error", 0), 1),
    (rec("no_error", 0), rec(), 0),
    (rec(), rec("no_error", 0), 0),
    (None, rec(), 0),
    (rec("missing_block", 5), rec("missing_block", 5), 1),
    (rec("missing_block", 5), rec("redundant_block", 5), 0),
    (rec("constant", 1), rec("constant", 1), 1),
    (rec("constant", 1), rec("logic", 1), 0),
    (rec("logic", 4), rec("logic", 4), 1),
    (rec("primitive", 2), rec("primitive", 2, text="different words"), 1),
    (rec("position", 6), rec("position", 7), 0),
    (rec("redundant_block", 9), rec("redundant_block", 9), 1),
    (rec("size", 2), rec("position", 2), 0),
    (rec("rotation", 1), rec("rotation", 1), 1),
    (rec("primitive", 3), rec("size", 4), 0),
    (rec("no_error", 0), rec("no_error", 0, text="other text"), 1),
]


def cand(t, b, vv, text=None, cd=None):
    text = text or f"{t} in block {b} ({vv})"
    return Candidate(FeedbackRecord("s1", E(t), b, text), text, None, vv, cd)


def random_candidate_set(rng, k):
    types = ["rotation", "size", "no_error"]
    cands = []
    for i in range(k):
        t = types[rng.integers(3)]
        b = 0 if t == "no_error" else int(rng.integers(1, 4))
        cands.append(cand(t, b, float(np.round(rng.uniform(-1, 1), 2)), text=f"c{i}"))
    return CandidateSet("s1", tuple(cands))


def disc_iou(size=256):
    cam = Camera((5.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 40.0, size, size)
    raster = render(Sphere(1.0), cam)
    # analytic projection: the sphere subtends asin(1/5) around the view axis
    half = math.tan(math.radians(20.0))
    xs = (2 * (np.arange(size) + 0.5) / size - 1) * half
    gx, gy = np.meshgrid(xs, xs)
    angle = np.arctan(np.hypot(gx, gy))
    disc = angle <= math.asin(1 / 5)
    inter = np.logical_and(disc, raster.silhouette).sum()
    return inter / np.logical_or(disc, raster.silhouette).sum(), raster
