"""Review feedback records, reward functions and preference-pair construction.

Candidate feedback comes from an external generator as JSONL rows with the
fields ``sample_id``, ``error_type``, ``block_id``, ``feedback`` and
``edited_program``. Nothing here runs a model.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .csg import CompileError, DegenerateGeometry, PointCloud, compile_source, normalize, sample_surface
from .metrics import chamfer
from .mutate import ErrorType
from .render import Raster

VISUAL_MARGIN = 0.25
# generator settings used for the K candidates; recorded only
SAMPLING_METADATA = {"temperature": 0.8, "top_p": 0.9, "k": 8}

PREDEFINED_CORRECT_FEEDBACK = (
    "The 3D rendering captures the essence of the design blueprint with remarkable precision and fidelity.",
    "The 3D model matches the design drawing perfectly, with no deviations in key features like frames and recesses.",
    "The OpenSCAD-generated 3D model matches the original design drawing perfectly in all aspects.",
    "The 3D model mirrors the design drawing with exceptional clarity, maintaining all specified features.",
    "The implementation of the design in OpenSCAD results in a highly accurate and detailed 3D model.",
    "The alignment between the 3D rendering and the design drawing is precise, with all features correctly placed.",
    "The design intent is fully realized in the 3D model, with precise implementation of all structural elements.",
    "The faithful replication of the design drawing in the 3D model indicates precise coding and attention to detail.",
    "The correspondence between the design plan and the 3D model is seamless, with no misalignment or deviation.",
    "A careful analysis shows the 3D model to be a perfect reproduction of the design drawing.",
)


class SampleMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FeedbackRecord:
    sample_id: str
    error_type: ErrorType
    block_id: int
    description: str

    def __post_init__(self):
        object.__setattr__(self, "error_type", ErrorType.parse(self.error_type))
        if not self.description.strip():
            raise ValueError("feedback description must not be empty")
        if self.error_type is ErrorType.NO_ERROR and self.block_id != 0:
            raise ValueError("a no-error verdict must name block 0")

    def to_json(self) -> dict:
        return {"sample_id": self.sample_id, "error_type": self.error_type.value,
                "block_id": self.block_id, "feedback": self.description}

    @classmethod
    def from_json(cls, row: dict) -> "FeedbackRecord":
        return cls(str(row["sample_id"]), ErrorType.parse(row["error_type"]),
                   int(row["block_id"]), row.get("feedback") or row.get("description", ""))


_BLOCK_RE = re.compile(r"^\s*(?:block\s*(?:id)?\s*[:#]?\s*)?(\d+)\s*$", re.IGNORECASE)


def parse_block_id(value) -> Optional[int]:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value if value >= 0 else None
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        m = _BLOCK_RE.match(value)
        return int(m.group(1)) if m else None
    return None


@dataclass(frozen=True)
class Candidate:
    """One generated review. ``feedback`` is None when the row could not be parsed."""

    feedback: Optional[FeedbackRecord]
    text: str = ""
    edited_program: Optional[str] = None
    visual_reward: Optional[float] = None
    cd: Optional[float] = None

    @classmethod
    def from_json(cls, row: dict) -> "Candidate":
        text = row.get("feedback") or ""
        block = parse_block_id(row.get("block_id"))
        try:
            etype = ErrorType.parse(row.get("error_type", ""))
        except ValueError:
            etype = None
        feedback = None
        if etype is not None and block is not None and text.strip():
            try:
                feedback = FeedbackRecord(str(row.get("sample_id", "")), etype, block, text)
            except ValueError:
                feedback = None
        return cls(feedback, text, row.get("edited_program"), row.get("visual_reward"), row.get("cd"))

    def to_json(self) -> dict:
        out = {"feedback": self.text}
        if self.feedback is not None:
            out.update(error_type=self.feedback.error_type.value, block_id=self.feedback.block_id)
        if self.edited_program is not None:
            out["edited_program"] = self.edited_program
        return out


@dataclass(frozen=True)
class CandidateSet:
    sample_id: str
    candidates: tuple[Candidate, ...]

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class PreferencePair:
    sample_id: str
    chosen: Candidate
    rejected: Candidate
    rewards: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"prompt_id": self.sample_id, "chosen": self.chosen.to_json(),
                "rejected": self.rejected.to_json(), "rewards": self.rewards}


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(row, dict) or "sample_id" not in row:
                raise SchemaError(f"{path}:{lineno}: row needs a sample_id")
            rows.append(row)
    return rows


def group_candidates(rows: Sequence[dict]) -> dict[str, CandidateSet]:
    grouped: dict[str, list[Candidate]] = {}
    for row in rows:
        grouped.setdefault(str(row["sample_id"]), []).append(Candidate.from_json(row))
    return {sid: CandidateSet(sid, tuple(c)) for sid, c in grouped.items()}


# --------------------------------------------------------------------------
# rewards


def diagnostic_reward(pred: Optional[FeedbackRecord], gold: FeedbackRecord) -> int:
    """1 when both the block id and the error type are right, else 0."""
    if pred is None:
        return 0
    if pred.sample_id != gold.sample_id:
        raise SampleMismatch(f"{pred.sample_id!r} vs {gold.sample_id!r}")
    return int(pred.block_id == gold.block_id and pred.error_type == gold.error_type)


class VisualEmbedder(Protocol):
    def embed(self, rasters: Sequence) -> np.ndarray: ...


def _silhouette(r) -> np.ndarray:
    return np.asarray(r.silhouette if isinstance(r, Raster) else r, dtype=float)


@dataclass(frozen=True)
class SilhouetteEmbedder:
    """Concatenated box-downsampled silhouettes mapped to [-1, 1] (background -1).

    A stand-in for a learned image encoder; only the embed contract matters.
    """

    size: int = 32

    def embed(self, rasters: Sequence) -> np.ndarray:
        parts = []
        for r in rasters:
            img = _silhouette(r)
            h, w = img.shape
            rows = np.linspace(0, h, self.size + 1).astype(int)
            cols = np.linspace(0, w, self.size + 1).astype(int)
            pooled = np.add.reduceat(np.add.reduceat(img, rows[:-1], axis=0), cols[:-1], axis=1)
            counts = np.outer(np.diff(rows), np.diff(cols))
            parts.append((2.0 * pooled / counts - 1.0).ravel())
        return np.concatenate(parts)


def visual_reward(reference: Sequence, rendered: Sequence, embedder: Optional[VisualEmbedder] = None) -> float:
    """Cosine similarity of the embeddings of two raster sets."""
    if len(reference) != len(rendered):
        raise ShapeMismatch(f"{len(reference)} reference views vs {len(rendered)} rendered")
    for a, b in zip(reference, rendered):
        if _silhouette(a).shape != _silhouette(b).shape:
            raise ShapeMismatch("view resolutions differ")
    embedder = embedder or SilhouetteEmbedder()
    u = np.asarray(embedder.embed(reference), dtype=float)
    v = np.asarray(embedder.embed(rendered), dtype=float)
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / denom, -1.0, 1.0))


def rank_by_chamfer(clouds: Sequence[Optional[PointCloud]], gold: PointCloud) -> list[tuple[int, float]]:
    """``(index, cd)`` ascending by CD; ``None`` clouds get +inf; ties keep index order."""
    scored = [(i, math.inf if c is None else chamfer(c, gold)) for i, c in enumerate(clouds)]
    return sorted(scored, key=lambda item: (item[1], item[0]))


def candidate_cloud(source: Optional[str], gold_cloud: PointCloud, n: int, seed: int) -> Optional[PointCloud]:
    """Cloud of an edited program in the gold cloud's frame, or None if it does not compile."""
    if not source:
        return None
    try:
        raw = sample_surface(compile_source(source), n, seed)
    except (CompileError, DegenerateGeometry):
        return None
    return normalize(raw, gold_cloud)


def pointcloud_reward(candidates: CandidateSet, gold_cloud: PointCloud, n: int = 2048, seed: int = 0) -> list[tuple[int, float]]:
    clouds = [candidate_cloud(c.edited_program, gold_cloud, n, seed) for c in candidates.candidates]
    return rank_by_chamfer(clouds, gold_cloud)


# --------------------------------------------------------------------------
# preference pairs


def keep_pair(vd_chosen: int, vd_rejected: int, vv_chosen: float, vv_rejected: float,
              mode: str = "and", margin: float = VISUAL_MARGIN) -> bool:
    """Retention rule for an ordered (chosen, rejected) pair.

    ``and``: chosen is diagnostically right, rejected wrong, and the visual
    reward gap exceeds ``margin``. ``or``: either the diagnostic reward
    prefers the chosen one, or the visual gap exceeds ``margin`` without the
    diagnostic reward preferring the rejected one.
    """
    gap = vv_chosen - vv_rejected
    if mode == "and":
        return vd_chosen == 1 and vd_rejected == 0 and gap > margin
    if mode == "or":
        return vd_chosen > vd_rejected or (vd_chosen >= vd_rejected and gap > margin)
    raise ValueError(f"unknown mode {mode!r}")


def _pair_key(pair: PreferencePair):
    return (json.dumps(pair.chosen.to_json(), sort_keys=True), json.dumps(pair.rejected.to_json(), sort_keys=True))


def build_dpo_pairs(candidates: CandidateSet, gold: FeedbackRecord, mode: str = "and",
                    margin: float = VISUAL_MARGIN) -> list[PreferencePair]:
    """Preference pairs from K scored candidates.

    ``and`` / ``or`` need ``visual_reward`` on every candidate. ``pointcloud``
    needs ``cd`` (use +inf for invalid edits) and yields at most one pair:
    lowest CD chosen, highest CD rejected. Identical pairs are dropped and
    the output order is deterministic.
    """
    cands = candidates.candidates
    if len(cands) < 2:
        return []
    if mode == "pointcloud":
        ranked = sorted(range(len(cands)), key=lambda i: (_cd(cands[i]), i))
        best, worst = ranked[0], ranked[-1]
        if not _cd(cands[best]) < _cd(cands[worst]):
            return []
        return [PreferencePair(candidates.sample_id, cands[best], cands[worst],
                               {"cd_chosen": _cd(cands[best]), "cd_rejected": _cd(cands[worst])})]

    vd = [diagnostic_reward(c.feedback, gold) for c in cands]
    vv = []
    for c in cands:
        if c.visual_reward is None:
            raise ValueError("every candidate needs a visual reward in this mode")
        vv.append(float(c.visual_reward))

    pairs, seen = [], set()
    for i in range(len(cands)):
        for j in range(len(cands)):
            if i == j or not keep_pair(vd[i], vd[j], vv[i], vv[j], mode, margin):
                continue
            pair = PreferencePair(candidates.sample_id, cands[i], cands[j], {
                "v_d_chosen": vd[i], "v_d_rejected": vd[j],
                "v_visual_chosen": vv[i], "v_visual_rejected": vv[j],
            })
            key = _pair_key(pair)
            if key in seen:
                continue
            seen.add(key)
            pairs.append(pair)
    pairs.sort(key=_pair_key)
    return pairs


def _cd(c: Candidate) -> float:
    return math.inf if c.cd is None else float(c.cd)


def predefined_correct_feedback(seed: int) -> str:
    rng = np.random.default_rng(seed)
    return PREDEFINED_CORRECT_FEEDBACK[int(rng.integers(len(PREDEFINED_CORRECT_FEEDBACK)))]
