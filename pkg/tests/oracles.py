"""Slow, independent reference implementations used as test oracles.

None of these import the code they check beyond plain data types.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def chamfer_bruteforce(p, q) -> float:
    """O(N*M) chamfer: every pairwise squared distance, then row/column minima."""
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    q = np.asarray(q, dtype=float).reshape(-1, 3)
    d2 = ((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def lcs_bruteforce(a, b) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter side."""
    if len(a) > len(b):
        a, b = b, a

    def is_subseq(sub, seq):
        it = iter(seq)
        return all(x in it for x in sub)

    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            if is_subseq([a[i] for i in idx], b):
                return k
    return 0


def dpo_filter_bruteforce(vd, vv, mode, margin=0.25):
    """All ordered index pairs (i, j) a retention rule accepts."""
    out = set()
    for i in range(len(vd)):
        for j in range(len(vd)):
            if i == j:
                continue
            gap = vv[i] - vv[j]
            if mode == "and":
                ok = vd[i] == 1 and vd[j] == 0 and gap > margin
            else:
                # diagnostic reward prefers i, or visual reward prefers i and
                # the diagnostic reward does not prefer j
                ok = (vd[i] == 1 and vd[j] == 0) or (not (vd[j] == 1 and vd[i] == 0) and gap > margin)
            if ok:
                out.add((i, j))
    return out


# --------------------------------------------------------------------------
# membership


def _local_inside(leaf, pts):
    name = type(leaf).__name__
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if name == "Cube":
        sx, sy, sz = leaf.size
        if leaf.center:
            return (np.abs(x) <= sx / 2) & (np.abs(y) <= sy / 2) & (np.abs(z) <= sz / 2)
        return (x >= 0) & (x <= sx) & (y >= 0) & (y <= sy) & (z >= 0) & (z <= sz)
    if name == "Sphere":
        return x * x + y * y + z * z <= leaf.radius * leaf.radius
    if name == "Cylinder":
        base = -leaf.height / 2 if leaf.center else 0.0
        frac = (z - base) / leaf.height
        radius = leaf.r1 * (1 - frac) + leaf.r2 * frac
        return (frac >= 0) & (frac <= 1) & (np.sqrt(x * x + y * y) <= radius)
    raise TypeError(name)


def membership_bruteforce(node, pts) -> np.ndarray:
    """Flatten the tree into leaves with composite world matrices, test every
    leaf in its own frame, then fold the boolean structure over those masks."""
    pts = np.asarray(pts, dtype=float)
    leaf_masks = []

    def collect(n, world):
        name = type(n).__name__
        if name == "Transform":
            collect(n.child, world @ np.asarray(n.matrix, dtype=float))
        elif name == "Boolean":
            for c in n.children:
                collect(c, world)
        else:
            homog = np.column_stack([pts, np.ones(len(pts))])
            local = np.linalg.solve(world, homog.T).T[:, :3]
            leaf_masks.append(_local_inside(n, local))

    collect(node, np.eye(4))
    counter = iter(leaf_masks)

    def fold(n):
        name = type(n).__name__
        if name == "Transform":
            return fold(n.child)
        if name != "Boolean":
            return next(counter)
        masks = [fold(c) for c in n.children]
        if n.op == "union":
            return np.logical_or.reduce(masks)
        if n.op == "intersection":
            return np.logical_and.reduce(masks)
        out = masks[0].copy()
        for m in masks[1:]:
            out &= ~m
        return out

    return fold(node)


def grid_cells(lo, hi, resolution=64):
    """Cell centers of a regular grid over a slightly padded box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pad = 0.05 * (hi - lo)
    axes = [np.linspace(a, b, resolution, endpoint=False) + (b - a) / (2 * resolution)
            for a, b in zip(lo - pad, hi + pad)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([a.ravel() for a in g])


# --------------------------------------------------------------------------
# analytic volumes


def cube_volume(a, b, c):
    return a * b * c


def sphere_volume(r):
    return 4.0 / 3.0 * math.pi * r ** 3


def frustum_volume(h, r1, r2):
    return math.pi * h * (r1 * r1 + r1 * r2 + r2 * r2) / 3.0
