"""Score candidate reviews with diagnostic and visual rewards and keep preference pairs.

Run: python demos/02_views_and_rewards.py
"""

import tempfile
from pathlib import Path

from scadkit.csg import compile_source
from scadkit.render import render_views, sample_views, silhouette_image, write_pgm
from scadkit.review import Candidate, CandidateSet, FeedbackRecord, build_dpo_pairs, diagnostic_reward, visual_reward

CORRECT = "difference() { cube([10, 10, 4]); translate([5, 5, -1]) cylinder(h=6, r=3); }"
GOLD = FeedbackRecord("demo", "size", 1, "Block 1: the hole radius is too small.")

# Three reviews of the same faulty program, each with its proposed fix.
CANDIDATES = [
    ("size", 1, "Block 1 hole is too small, radius should be 3.",
     "difference() { cube([10, 10, 4]); translate([5, 5, -1]) cylinder(h=6, r=3); }"),
    ("size", 1, "Block 1 hole is undersized, use radius 2.",
     "difference() { cube([10, 10, 4]); translate([5, 5, -1]) cylinder(h=6, r=2); }"),
    ("position", 1, "Block 1 plate is misplaced.",
     "translate([0, 0, 8]) cube([10, 10, 4]);"),
]

node = compile_source(CORRECT)
views = sample_views(seed=3, node=node, size=96)
refs = render_views(node, views)
out = Path(tempfile.mkdtemp(prefix="scad-demo-"))
for k, raster in enumerate(refs):
    write_pgm(out / f"ref_{k}.pgm", silhouette_image(raster))
print(f"Reference views written to {out}")

scored = []
for t, b, text, fix in CANDIDATES:
    fb = FeedbackRecord("demo", t, b, text)
    vv = visual_reward(refs, render_views(compile_source(fix), views))
    print(f"  V_d={diagnostic_reward(fb, GOLD)}  V_v={vv:.3f}  {text}")
    scored.append(Candidate(fb, text, fix, vv))

cset = CandidateSet("demo", tuple(scored))
for mode in ("and", "or"):
    pairs = build_dpo_pairs(cset, GOLD, mode)
    print(f"\n{mode.upper()} rule keeps {len(pairs)} pair(s):")
    for p in pairs:
        print(f"  chosen:   {p.chosen.text}\n  rejected: {p.rejected.text}")
