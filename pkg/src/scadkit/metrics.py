"""Shape metrics (CD, MMD, JSD, invalid ratio) and feedback-text metrics."""

from __future__ import annotations

import math
import re
import string
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .csg import CompileError, PointCloud, compile_source


class EmptyCloud(ValueError):
    pass


class EmptySet(ValueError):
    pass


class EmptyList(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloud("point cloud is empty")
    return pts


def _directed(src: np.ndarray, dst: np.ndarray) -> float:
    _, idx = cKDTree(dst).query(src)
    diff = src - dst[idx]
    return float(np.einsum("ij,ij->i", diff, diff).mean())


def chamfer(p, q) -> float:
    """Mean squared nearest-neighbour distance from p to q plus from q to p."""
    a, b = _points(p), _points(q)
    return _directed(a, b) + _directed(b, a)


def mmd(reference: Sequence, generated: Sequence) -> float:
    """Mean over reference shapes of the smallest chamfer distance to any generated shape."""
    if not reference or not generated:
        raise EmptySet("mmd needs non-empty sets")
    return float(np.mean([min(chamfer(g, y) for g in generated) for y in reference]))


@dataclass
class VoxelHistogram:
    resolution: int
    counts: np.ndarray
    total: int

    @classmethod
    def from_clouds(cls, clouds: Sequence, resolution: int = 16) -> "VoxelHistogram":
        """Occupancy counts over [-0.5, 0.5]^3; points outside clip to the border cells."""
        if resolution < 2:
            raise ValueError("resolution must be at least 2")
        counts = np.zeros((resolution,) * 3, dtype=np.int64)
        for cloud in clouds:
            pts = _points(cloud)
            idx = np.clip(np.floor((pts + 0.5) * resolution).astype(np.int64), 0, resolution - 1)
            np.add.at(counts, (idx[:, 0], idx[:, 1], idx[:, 2]), 1)
        return cls(resolution, counts, int(counts.sum()))

    def distribution(self) -> np.ndarray:
        return self.counts.ravel() / self.total


def _kl(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / m[mask])))


def jsd(reference: Sequence, generated: Sequence, resolution: int = 16) -> float:
    """Jensen-Shannon divergence (nats) between pooled voxel occupancy of two sets."""
    if not reference or not generated:
        raise EmptySet("jsd needs non-empty sets")
    p = VoxelHistogram.from_clouds(reference, resolution).distribution()
    q = VoxelHistogram.from_clouds(generated, resolution).distribution()
    m = 0.5 * (p + q)
    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def compiles(source: str) -> bool:
    try:
        compile_source(source)
    except CompileError:
        return False
    return True


def invalid_ratio(sources: Sequence[str]) -> float:
    if not sources:
        raise EmptyList("no programs given")
    return sum(not compiles(s) for s in sources) / len(sources)


def feedback_accuracy(pred: Sequence, gold: Sequence) -> float:
    """Fraction of samples whose block id and error type are both right."""
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions for {len(gold)} gold records")
    if not gold:
        raise EmptyList("no records given")
    hits = sum(
        p is not None and p.block_id == g.block_id and p.error_type == g.error_type
        for p, g in zip(pred, gold)
    )
    return hits / len(gold)


_PUNCT_RE = re.compile(f"[{re.escape(string.punctuation)}]")


def rouge_tokens(text: str) -> list[str]:
    return _PUNCT_RE.sub(" ", text.lower()).split()


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 over lowercased, punctuation-stripped whitespace tokens."""
    cand, ref = rouge_tokens(candidate), rouge_tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(cand), lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    cd_mean: float
    mmd: float
    jsd: float
    ir: float
    feedback_acc: float
    rouge_l: float
    n_samples: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        """Aligned text table; CD, MMD and JSD are shown multiplied by 10^3."""
        rows = [
            ("R_L", f"{100 * self.rouge_l:.2f}"),
            ("Acc", f"{100 * self.feedback_acc:.2f}"),
            ("CD (x1e3)", _fmt_scaled(self.cd_mean)),
            ("MMD (x1e3)", _fmt_scaled(self.mmd)),
            ("JSD (x1e3)", _fmt_scaled(self.jsd)),
            ("IR (%)", f"{100 * self.ir:.2f}"),
            ("samples", str(self.n_samples)),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:>10}" for name, value in rows)


def _fmt_scaled(value: float) -> str:
    return "nan" if math.isnan(value) else f"{1e3 * value:.3f}"
