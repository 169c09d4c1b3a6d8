"""Silhouette and depth rendering by sphere tracing the pseudo-SDF."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .csg import Boolean, CsgNode, Transform, _apply, _sdf, bounds

MAX_STEPS = 256
HIT_EPS = 1e-4  # relative to the bounding-box diagonal
MIN_GAP = math.pi / 10
ELEVATIONS_DEG = (20.0, 35.0, 50.0)
DISTANCE_FACTOR = 2.2
FOV_DEG = 40.0


@dataclass(frozen=True)
class Camera:
    eye: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vertical_fov: float = FOV_DEG
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if np.allclose(self.eye, self.target):
            raise ValueError("camera eye and target coincide")
        if not 0 < self.vertical_fov < 180:
            raise ValueError("field of view must be in (0, 180) degrees")
        if self.width < 16 or self.height < 16:
            raise ValueError("raster must be at least 16x16")

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Origin and unit directions, one ray per pixel center, row-major."""
        eye = np.asarray(self.eye, dtype=float)
        forward = np.asarray(self.target, dtype=float) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(self.up, dtype=float)
        if abs(np.dot(up, forward)) > 0.999:
            up = np.array([0.0, 1.0, 0.0]) if abs(forward[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        half = math.tan(math.radians(self.vertical_fov) / 2)
        aspect = self.width / self.height
        xs = (2 * (np.arange(self.width) + 0.5) / self.width - 1) * half * aspect
        ys = (1 - 2 * (np.arange(self.height) + 0.5) / self.height) * half
        gx, gy = np.meshgrid(xs, ys)
        dirs = forward + gx[..., None] * right + gy[..., None] * true_up
        dirs = dirs.reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return eye, dirs


@dataclass(frozen=True)
class ViewSet:
    cameras: tuple[Camera, ...]
    azimuths: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Raster:
    silhouette: np.ndarray  # bool (height, width)
    depth: np.ndarray  # float (height, width), +inf where the ray missed

    @property
    def width(self) -> int:
        return self.silhouette.shape[1]

    @property
    def height(self) -> int:
        return self.silhouette.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return np.array_equal(self.silhouette, other.silhouette) and np.array_equal(self.depth, other.depth)


def min_circular_gap(azimuths: Sequence[float]) -> float:
    a = np.asarray(azimuths, dtype=float) % (2 * math.pi)
    gaps = [
        min(abs(x - y), 2 * math.pi - abs(x - y))
        for i, x in enumerate(a) for y in a[i + 1:]
    ]
    return min(gaps) if gaps else math.inf


def azimuths_ok(azimuths: Sequence[float], min_gap: float = MIN_GAP) -> bool:
    return min_circular_gap(azimuths) > min_gap


def orbit_camera(lo, hi, azimuth: float, elevation_deg: float, size: int = 256) -> Camera:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    center = (lo + hi) / 2
    distance = DISTANCE_FACTOR * float(np.linalg.norm(hi - lo))
    el = math.radians(elevation_deg)
    direction = np.array([math.cos(el) * math.cos(azimuth), math.cos(el) * math.sin(azimuth), math.sin(el)])
    eye = center + distance * direction
    return Camera(tuple(eye), tuple(center), (0.0, 0.0, 1.0), FOV_DEG, size, size)


def sample_views(seed: int, node: Optional[CsgNode] = None, size: int = 256) -> ViewSet:
    """Three azimuths in [0, 2pi) with pairwise circular gaps above pi/10.

    Elevations are 20, 35 and 50 degrees in draw order. Cameras frame the
    node's bounding box (a unit box around the origin when no node is given).
    """
    rng = np.random.default_rng(seed)
    while True:
        azimuths = rng.uniform(0.0, 2 * math.pi, size=3)
        if azimuths_ok(azimuths):
            break
    lo, hi = bounds(node) if node is not None else (np.full(3, -0.5), np.full(3, 0.5))
    cameras = tuple(orbit_camera(lo, hi, az, el, size) for az, el in zip(azimuths, ELEVATIONS_DEG))
    return ViewSet(cameras, tuple(float(a) for a in azimuths))


def _box_interval(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    return np.maximum(tmin, 0.0), tmax


def _box_distance(pts: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.maximum(np.maximum(lo - pts, pts - hi), 0.0), axis=1)


def _culled_sdf(node: CsgNode, pts: np.ndarray, boxes: dict) -> np.ndarray:
    # Same sign as the pseudo-SDF and still a lower bound on the true
    # distance, but union children whose bounding box is farther than the
    # running minimum are skipped.
    if isinstance(node, Transform):
        return node.lipschitz * _culled_sdf(node.child, _apply(node.inverse, pts), boxes)
    if not isinstance(node, Boolean):
        return _sdf(node, pts)
    if node.op != "union" or len(node.children) == 1:
        values = [_culled_sdf(c, pts, boxes) for c in node.children]
        if node.op == "union" or len(values) == 1:
            return values[0]
        if node.op == "intersection":
            return np.maximum.reduce(values)
        return np.maximum(values[0], -np.minimum.reduce(values[1:]))
    best = np.full(len(pts), np.inf)
    for child in node.children:
        key = id(child)
        if key not in boxes:
            boxes[key] = bounds(child)
        need = np.flatnonzero(_box_distance(pts, *boxes[key]) <= best)
        if need.size:
            best[need] = np.minimum(best[need], _culled_sdf(child, pts[need], boxes))
    return best


def render(node: CsgNode, camera: Camera, max_steps: int = MAX_STEPS) -> Raster:
    """Sphere-trace every pixel.

    The pseudo-SDF never exceeds the true distance outside the solid, so
    stepping by its value cannot skip a surface.
    """
    origin, dirs = camera.rays()
    lo, hi = bounds(node)
    diag = float(np.linalg.norm(hi - lo))
    eps = HIT_EPS * diag
    pad = 2 * eps
    t, t_far = _box_interval(origin, dirs, lo - pad, hi + pad)
    n = len(dirs)
    depth = np.full(n, np.inf)
    active = np.flatnonzero(t <= t_far)
    t = t.copy()
    boxes: dict = {}

    for _ in range(max_steps):
        if active.size == 0:
            break
        pts = origin + dirs[active] * t[active, None]
        d = _culled_sdf(node, pts, boxes)
        hit = d < eps
        depth[active[hit]] = t[active[hit]]
        active, d = active[~hit], d[~hit]
        t[active] += np.maximum(d, 0.5 * eps)
        active = active[t[active] <= t_far[active]]

    depth = depth.reshape(camera.height, camera.width)
    return Raster(np.isfinite(depth), depth)


def render_views(node: CsgNode, views: ViewSet) -> list[Raster]:
    return [render(node, cam) for cam in views.cameras]


# --------------------------------------------------------------------------
# PGM (P5) files


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM; uint8 images get maxval 255, anything else 16-bit 65535."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        maxval, data = 255, image.tobytes()
    else:
        maxval, data = 65535, image.astype(">u2").tobytes()
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = np.uint8 if maxval < 256 else ">u2"
    return np.frombuffer(data[pos:], dtype=dtype, count=width * height).reshape(height, width).astype(
        np.uint8 if maxval < 256 else np.uint16)


def silhouette_image(raster: Raster) -> np.ndarray:
    return np.where(raster.silhouette, 255, 0).astype(np.uint8)


def depth_image(raster: Raster) -> np.ndarray:
    """16-bit depth: 0 is background, hits scale linearly onto 1..65535 (near to far)."""
    out = np.zeros(raster.depth.shape, dtype=np.uint16)
    hits = np.isfinite(raster.depth)
    if hits.any():
        d = raster.depth[hits]
        lo, hi = d.min(), d.max()
        span = hi - lo if hi > lo else 1.0
        out[hits] = (1 + np.round((d - lo) / span * 65534)).astype(np.uint16)
    return out
