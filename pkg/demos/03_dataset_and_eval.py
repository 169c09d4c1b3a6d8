"""Build a small review dataset, then score a perfect and a sloppy predictor on it.

Run: python demos/03_dataset_and_eval.py
"""

import tempfile
from pathlib import Path

import numpy as np

from scadkit.dataset import build_dataset, evaluate_predictions, load_gold

out = Path(tempfile.mkdtemp(prefix="scad-dataset-"))
manifest = build_dataset(12, seed=4, split_fracs=(0.5, 0.0, 0.5), out_dir=out, size=64)
print(f"Dataset in {out}")
print("  samples per split:", manifest.counts)
print("  samples per error type:", manifest.histogram)
print("  manifest sha256:", manifest.digest()[:16], "...")

rows = load_gold(out / "test_gold.jsonl")


def prediction(row, feedback=None, program=None):
    return {"sample_id": row["sample_id"], "error_type": row["error_type"], "block_id": row["block_id"],
            "feedback": feedback or row["feedback"], "edited_program": program or row["correct_program"]}


perfect = {r["sample_id"]: prediction(r) for r in rows}
print("\nGold predictions:")
print(evaluate_predictions(perfect, rows, n_points=1024).table())

# The sloppy reviewer blames block 1 every time and returns the faulty program
# unchanged, except that one in five edits does not even parse.
rng = np.random.default_rng(0)
sloppy = {}
for r in rows:
    p = prediction(r, feedback="Block 1 looks wrong.", program=r["erroneous_program"])
    p["block_id"] = 1
    if rng.random() < 0.2:
        p["edited_program"] = "cube([1, 2"
    sloppy[r["sample_id"]] = p
print("\nSloppy predictions:")
print(evaluate_predictions(sloppy, rows, n_points=1024).table())
