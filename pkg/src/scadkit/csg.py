"""Program evaluation to a CSG tree, membership / pseudo-SDF queries and
surface point sampling.

Conventions follow OpenSCAD: right-handed, z-up, angles in degrees and
``rotate([x, y, z])`` applies the x rotation first, then y, then z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .syntax import (
    BOOLEANS,
    Assign,
    Binary,
    Bool,
    Call,
    Expr,
    For,
    Group,
    If,
    LexError,
    ModuleDef,
    Num,
    ParseError,
    Program,
    Range,
    Stmt,
    Unary,
    Var,
    Vector,
    parse,
)

LOOP_BUDGET = 10_000
MAX_RECURSION = 32
BOUNDARY_EPS = 1e-6  # relative to the bounding-box diagonal
DEFAULT_POINTS = 2048


class CompileError(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


class ZeroExtent(ValueError):
    pass


# --------------------------------------------------------------------------
# Geometry tree


@dataclass(frozen=True)
class Cube:
    size: tuple[float, float, float]
    center: bool = False


@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class Cylinder:
    height: float
    r1: float
    r2: float
    center: bool = False


@dataclass(frozen=True, eq=False)
class Transform:
    matrix: np.ndarray
    child: "CsgNode"
    inverse: np.ndarray = field(init=False, repr=False)
    # smallest singular value of the linear part; scales child distances
    # into a lower bound on world-space distance
    lipschitz: float = field(init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("transform matrix must be 4x4")
        linear = m[:3, :3]
        if abs(np.linalg.det(linear)) < 1e-12:
            raise ValueError("transform matrix is not invertible")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inverse", np.linalg.inv(m))
        object.__setattr__(self, "lipschitz", float(np.linalg.svd(linear, compute_uv=False)[-1]))

    def __eq__(self, other):
        if not isinstance(other, Transform):
            return NotImplemented
        return np.allclose(self.matrix, other.matrix, atol=1e-12) and self.child == other.child

    def __hash__(self):
        return hash((Transform, self.child))


@dataclass(frozen=True)
class Boolean:
    op: str
    children: tuple["CsgNode", ...]

    def __post_init__(self):
        if self.op not in BOOLEANS:
            raise ValueError(f"unknown boolean {self.op!r}")
        if not self.children:
            raise ValueError("boolean needs at least one child")


CsgNode = Union[Cube, Sphere, Cylinder, Transform, Boolean]


def translation(v) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = v
    return m


def scaling(v) -> np.ndarray:
    return np.diag([v[0], v[1], v[2], 1.0])


def rotation(angles_deg) -> np.ndarray:
    """x, then y, then z rotation (degrees), as OpenSCAD's ``rotate([x, y, z])``."""
    ax, ay, az = (math.radians(a) for a in angles_deg)
    cx, sx, cy, sy, cz, sz = math.cos(ax), math.sin(ax), math.cos(ay), math.sin(ay), math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    m = np.eye(4)
    m[:3, :3] = rz @ ry @ rx
    return m


def mirroring(normal) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    length = np.linalg.norm(n)
    m = np.eye(4)
    if length > 0:
        n = n / length
        m[:3, :3] -= 2.0 * np.outer(n, n)
    return m


# --------------------------------------------------------------------------
# Evaluation


class _Scope:
    def __init__(self, parent: Optional["_Scope"] = None):
        self.parent = parent
        self.vars: dict[str, object] = {}
        self.modules: dict[str, tuple[ModuleDef, "_Scope"]] = {}

    def lookup(self, name: str):
        scope = self
        while scope is not None:
            if name in scope.vars:
                return scope.vars[name]
            scope = scope.parent
        raise CompileError(f"undefined variable {name!r}")

    def module(self, name: str):
        scope = self
        while scope is not None:
            if name in scope.modules:
                return scope.modules[name]
            scope = scope.parent
        raise CompileError(f"unknown module {name!r}")


def _truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        return value != 0.0
    if isinstance(value, list):
        return bool(value)
    return value is not None


def _is_num(value) -> bool:
    return isinstance(value, float)


class _Evaluator:
    def __init__(self, loop_budget: int = LOOP_BUDGET, max_depth: int = MAX_RECURSION):
        self.loops_left = loop_budget
        self.max_depth = max_depth
        self.depth = 0

    # expressions
    def expr(self, e: Expr, scope: _Scope):
        if isinstance(e, Num):
            return float(e.value)
        if isinstance(e, Bool):
            return bool(e.value)
        if isinstance(e, Var):
            return scope.lookup(e.name)
        if isinstance(e, Vector):
            return [self.expr(item, scope) for item in e.items]
        if isinstance(e, Range):
            return list(self.iterate(e, scope))
        if isinstance(e, Unary):
            v = self.expr(e.operand, scope)
            if e.op == "!":
                return not _truthy(v)
            return self.negate(v)
        if isinstance(e, Binary):
            if e.op == "&&":
                return _truthy(self.expr(e.lhs, scope)) and _truthy(self.expr(e.rhs, scope))
            if e.op == "||":
                return _truthy(self.expr(e.lhs, scope)) or _truthy(self.expr(e.rhs, scope))
            return self.binary(e.op, self.expr(e.lhs, scope), self.expr(e.rhs, scope))
        raise CompileError(f"cannot evaluate {e!r}")

    def negate(self, v):
        if _is_num(v):
            return -v
        if isinstance(v, list):
            return [self.negate(x) for x in v]
        raise CompileError("cannot negate a boolean")

    def binary(self, op: str, a, b):
        if op in ("==", "!="):
            return (a == b) == (op == "==")
        if op in ("<", "<=", ">", ">="):
            if not (_is_num(a) and _is_num(b)):
                raise CompileError(f"comparison {op} needs numbers")
            return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
        if op in ("+", "-"):
            if _is_num(a) and _is_num(b):
                return a + b if op == "+" else a - b
            if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
                return [self.binary(op, x, y) for x, y in zip(a, b)]
            raise CompileError(f"operands of {op} do not match")
        if op == "*":
            if _is_num(a) and _is_num(b):
                return a * b
            if isinstance(a, list) and _is_num(b):
                return [self.binary("*", x, b) for x in a]
            if _is_num(a) and isinstance(b, list):
                return [self.binary("*", a, y) for y in b]
            if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
                return sum(self.binary("*", x, y) for x, y in zip(a, b))
            raise CompileError("operands of * do not match")
        if op in ("/", "%"):
            if _is_num(b) and b == 0.0:
                raise CompileError("division by zero")
            if _is_num(a) and _is_num(b):
                return a / b if op == "/" else math.fmod(a, b)
            if isinstance(a, list) and _is_num(b):
                return [self.binary(op, x, b) for x in a]
            raise CompileError(f"operands of {op} do not match")
        raise CompileError(f"unknown operator {op}")

    def iterate(self, e: Expr, scope: _Scope):
        if isinstance(e, Range):
            start = self.number(e.start, scope, "range start")
            end = self.number(e.end, scope, "range end")
            step = 1.0 if e.step is None else self.number(e.step, scope, "range step")
            if step == 0:
                raise CompileError("range step is zero")
            k = 0
            while True:
                v = start + k * step
                if (step > 0 and v > end + 1e-9) or (step < 0 and v < end - 1e-9):
                    return
                self.spend_loop()
                yield v
                k += 1
        value = self.expr(e, scope)
        if not isinstance(value, list):
            raise CompileError("for loop needs a range or vector")
        for v in value:
            self.spend_loop()
            yield v

    def spend_loop(self):
        self.loops_left -= 1
        if self.loops_left < 0:
            raise CompileError("loop budget exceeded")

    def number(self, e: Expr, scope: _Scope, what: str) -> float:
        v = self.expr(e, scope)
        if not _is_num(v) or not math.isfinite(v):
            raise CompileError(f"{what} must be a finite number")
        return v

    # statements
    def block(self, stmts: Sequence[Stmt], scope: _Scope) -> list:
        for s in stmts:
            if isinstance(s, ModuleDef):
                scope.modules[s.name] = (s, scope)
        nodes = []
        for s in stmts:
            node = self.stmt(s, scope)
            if node is not None:
                nodes.append(node)
        return nodes

    def stmt(self, s: Stmt, scope: _Scope) -> Optional[CsgNode]:
        if isinstance(s, Assign):
            scope.vars[s.name] = self.expr(s.value, scope)
            return None
        if isinstance(s, ModuleDef):
            return None
        if isinstance(s, Group):
            return _union(self.block(s.body, _Scope(scope)))
        if isinstance(s, For):
            nodes = []
            for v in self.iterate(s.iterable, scope):
                inner = _Scope(scope)
                inner.vars[s.var] = v
                node = self.stmt(s.body, inner)
                if node is not None:
                    nodes.append(node)
            return _union(nodes)
        if isinstance(s, If):
            if _truthy(self.expr(s.cond, scope)):
                return self.stmt(s.then, _Scope(scope))
            if s.orelse is not None:
                return self.stmt(s.orelse, _Scope(scope))
            return None
        if isinstance(s, Call):
            return self.call(s, scope)
        raise CompileError(f"unsupported statement {type(s).__name__}")

    def children(self, call: Call, scope: _Scope) -> list:
        if call.child is None:
            return []
        if isinstance(call.child, Group):
            return self.block(call.child.body, _Scope(scope))
        node = self.stmt(call.child, _Scope(scope))
        return [] if node is None else [node]

    def bind(self, call: Call, names: Sequence[str], scope: _Scope) -> dict:
        if len(call.args) > len(names):
            raise CompileError(f"too many arguments to {call.name}")
        bound = {n: self.expr(a, scope) for n, a in zip(names, call.args)}
        for key, value in call.kwargs:
            if key in bound:
                raise CompileError(f"argument {key!r} given twice to {call.name}")
            bound[key] = self.expr(value, scope)
        return bound

    def call(self, call: Call, scope: _Scope) -> Optional[CsgNode]:
        name = call.name
        if name == "cube":
            a = self.bind(call, ("size", "center"), scope)
            _check_keys(a, {"size", "center"}, name)
            size = a.get("size", 1.0)
            vec = _vec3(size, "cube size") if isinstance(size, list) else (size,) * 3
            _positive(vec, "cube size")
            return Cube(tuple(float(x) for x in vec), _flag(a.get("center", False)))
        if name == "sphere":
            a = self.bind(call, ("r",), scope)
            _check_keys(a, {"r", "d"}, name)
            r = a["d"] / 2 if "d" in a and _is_num(a["d"]) else a.get("r", 1.0)
            _positive((r,), "sphere radius")
            return Sphere(float(r))
        if name == "cylinder":
            a = self.bind(call, ("h", "r1", "r2", "center"), scope)
            _check_keys(a, {"h", "r", "r1", "r2", "d", "d1", "d2", "center"}, name)
            r = a["d"] / 2 if _is_num(a.get("d")) else a.get("r", 1.0)
            r1 = a["d1"] / 2 if _is_num(a.get("d1")) else a.get("r1", r)
            r2 = a["d2"] / 2 if _is_num(a.get("d2")) else a.get("r2", r)
            h = a.get("h", 1.0)
            _positive((h, r1, r2), "cylinder dimension")
            return Cylinder(float(h), float(r1), float(r2), _flag(a.get("center", False)))
        if name in ("translate", "rotate", "scale", "mirror"):
            a = self.bind(call, ("a",) if name == "rotate" else ("v",), scope)
            _check_keys(a, {"a"} if name == "rotate" else {"v"}, name)
            value = a.get("a" if name == "rotate" else "v")
            if value is None:
                raise CompileError(f"{name} needs an argument")
            matrix = self.transform_matrix(name, value)
            child = _union(self.children(call, scope))
            return None if child is None else Transform(matrix, child)
        if name in BOOLEANS:
            kids = self.children(call, scope)
            if not kids:
                return None
            if name == "union" or len(kids) == 1:
                return _union(kids)
            return Boolean(name, tuple(kids))
        return self.user_module(call, scope)

    def transform_matrix(self, name: str, value) -> np.ndarray:
        if name == "rotate":
            if _is_num(value):
                return rotation((0.0, 0.0, value))
            return rotation(_vec3(value, "rotate angles"))
        if name == "translate":
            if not isinstance(value, list):
                raise CompileError("translate needs a vector")
            return translation(_vec3(value, "translate offset"))
        if name == "scale":
            vec = (value,) * 3 if _is_num(value) else _vec3(value, "scale factors", pad=1.0)
            if any(abs(x) < 1e-12 for x in vec):
                raise CompileError("scale factor of zero")
            return scaling(vec)
        return mirroring(_vec3(value, "mirror normal"))

    def user_module(self, call: Call, scope: _Scope) -> Optional[CsgNode]:
        definition, def_scope = scope.module(call.name)
        if call.child is not None:
            raise CompileError(f"module {call.name!r} does not take children")
        if self.depth >= self.max_depth:
            raise CompileError("module recursion depth exceeded")
        names = [p.name for p in definition.params]
        values = self.bind(call, names, scope)
        for key in values:
            if key not in names:
                raise CompileError(f"module {call.name!r} has no parameter {key!r}")
        inner = _Scope(def_scope)
        for p in definition.params:
            if p.name in values:
                inner.vars[p.name] = values[p.name]
            elif p.default is not None:
                inner.vars[p.name] = self.expr(p.default, inner)
        self.depth += 1
        try:
            return _union(self.block(definition.body, inner))
        finally:
            self.depth -= 1


def _check_keys(bound: dict, allowed: set, name: str):
    extra = set(bound) - allowed
    if extra:
        raise CompileError(f"{name} got unexpected argument(s) {sorted(extra)}")


def _flag(value) -> bool:
    if isinstance(value, bool):
        return value
    raise CompileError("center must be true or false")


def _vec3(value, what: str, pad: float = 0.0) -> tuple[float, float, float]:
    if not isinstance(value, list) or not 1 <= len(value) <= 3 or not all(_is_num(x) for x in value):
        raise CompileError(f"{what} must be a vector of 1-3 numbers")
    vec = list(value) + [pad] * (3 - len(value))
    if not all(math.isfinite(x) for x in vec):
        raise CompileError(f"{what} must be finite")
    return tuple(vec)


def _positive(values, what: str):
    for v in values:
        if not _is_num(v) or not math.isfinite(v) or v <= 0:
            raise CompileError(f"non-positive or invalid {what}: {v!r}")


def _union(nodes: list) -> Optional[CsgNode]:
    if not nodes:
        return None
    if len(nodes) == 1:
        return nodes[0]
    return Boolean("union", tuple(nodes))


def evaluate(program: Program, loop_budget: int = LOOP_BUDGET, max_depth: int = MAX_RECURSION) -> CsgNode:
    """Compile ``program`` to a CSG tree; raises :class:`CompileError`."""
    ev = _Evaluator(loop_budget, max_depth)
    try:
        node = _union(ev.block(program.statements, _Scope()))
    except RecursionError as exc:
        raise CompileError("expression nesting too deep") from exc
    if node is None:
        raise CompileError("program produces no geometry")
    return node


def compile_source(source: str) -> CsgNode:
    """Parse and evaluate; parse failures are reported as :class:`CompileError`."""
    try:
        program = parse(source)
    except (LexError, ParseError) as exc:
        raise CompileError(str(exc)) from exc
    return evaluate(program)


# --------------------------------------------------------------------------
# Queries


def _as_points(p) -> tuple[np.ndarray, bool]:
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    return pts.reshape(-1, 3), single


def _apply(matrix: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ matrix[:3, :3].T + matrix[:3, 3]


def _cyl_z0(c: Cylinder) -> float:
    return -c.height / 2 if c.center else 0.0


def _inside(node: CsgNode, pts: np.ndarray) -> np.ndarray:
    if isinstance(node, Cube):
        size = np.asarray(node.size)
        lo = -size / 2 if node.center else np.zeros(3)
        return np.all((pts >= lo) & (pts <= lo + size), axis=1)
    if isinstance(node, Sphere):
        return np.einsum("ij,ij->i", pts, pts) <= node.radius ** 2
    if isinstance(node, Cylinder):
        t = (pts[:, 2] - _cyl_z0(node)) / node.height
        r = node.r1 + (node.r2 - node.r1) * t
        rho2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        return (t >= 0) & (t <= 1) & (rho2 <= r * r)
    if isinstance(node, Transform):
        return _inside(node.child, _apply(node.inverse, pts))
    if isinstance(node, Boolean):
        first = _inside(node.children[0], pts)
        if node.op == "union":
            for child in node.children[1:]:
                first |= _inside(child, pts)
        elif node.op == "intersection":
            for child in node.children[1:]:
                first &= _inside(child, pts)
        else:
            for child in node.children[1:]:
                first &= ~_inside(child, pts)
        return first
    raise TypeError(f"not a CSG node: {node!r}")


def contains(node: CsgNode, p):
    """Solid membership of one point (returns bool) or of an (N, 3) array."""
    pts, single = _as_points(p)
    result = _inside(node, pts)
    return bool(result[0]) if single else result


def _box_sdf(pts, half, center):
    q = np.abs(pts - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    return outside + np.minimum(q.max(axis=1), 0.0)


def _frustum_sdf(node: Cylinder, pts: np.ndarray) -> np.ndarray:
    # exact distance to a capped cone with radius r1 at the bottom cap and
    # r2 at the top, measured in the (radial, axial) half-plane
    hh = node.height / 2
    zc = _cyl_z0(node) + hh
    qx = np.hypot(pts[:, 0], pts[:, 1])
    qy = pts[:, 2] - zc
    r1, r2 = node.r1, node.r2
    cap_r = np.where(qy < 0, r1, r2)
    ca_x = qx - np.minimum(qx, cap_r)
    ca_y = np.abs(qy) - hh
    k2x, k2y = r2 - r1, 2 * hh
    t = ((r2 - qx) * k2x + (hh - qy) * k2y) / (k2x * k2x + k2y * k2y)
    t = np.clip(t, 0.0, 1.0)
    cb_x = qx - r2 + k2x * t
    cb_y = qy - hh + k2y * t
    sign = np.where((cb_x < 0) & (ca_y < 0), -1.0, 1.0)
    return sign * np.sqrt(np.minimum(ca_x ** 2 + ca_y ** 2, cb_x ** 2 + cb_y ** 2))


def _sdf(node: CsgNode, pts: np.ndarray) -> np.ndarray:
    if isinstance(node, Cube):
        size = np.asarray(node.size)
        center = np.zeros(3) if node.center else size / 2
        return _box_sdf(pts, size / 2, center)
    if isinstance(node, Sphere):
        return np.linalg.norm(pts, axis=1) - node.radius
    if isinstance(node, Cylinder):
        return _frustum_sdf(node, pts)
    if isinstance(node, Transform):
        return node.lipschitz * _sdf(node.child, _apply(node.inverse, pts))
    if isinstance(node, Boolean):
        values = [_sdf(c, pts) for c in node.children]
        if node.op == "union":
            return np.minimum.reduce(values)
        if node.op == "intersection":
            return np.maximum.reduce(values)
        if len(values) == 1:
            return values[0]
        return np.maximum(values[0], -np.minimum.reduce(values[1:]))
    raise TypeError(f"not a CSG node: {node!r}")


def pseudo_sdf(node: CsgNode, p):
    """Signed field: negative inside, exact at leaves, min/max combined at booleans."""
    pts, single = _as_points(p)
    result = _sdf(node, pts)
    return float(result[0]) if single else result


def bounds(node: CsgNode) -> tuple[np.ndarray, np.ndarray]:
    """Conservative axis-aligned bounding box ``(lo, hi)``."""
    if isinstance(node, Cube):
        size = np.asarray(node.size, dtype=float)
        lo = -size / 2 if node.center else np.zeros(3)
        return lo, lo + size
    if isinstance(node, Sphere):
        r = node.radius
        return np.full(3, -r), np.full(3, r)
    if isinstance(node, Cylinder):
        r = max(node.r1, node.r2)
        z0 = _cyl_z0(node)
        return np.array([-r, -r, z0]), np.array([r, r, z0 + node.height])
    if isinstance(node, Transform):
        lo, hi = bounds(node.child)
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        world = _apply(node.matrix, corners)
        return world.min(axis=0), world.max(axis=0)
    if isinstance(node, Boolean):
        boxes = [bounds(c) for c in node.children]
        if node.op == "union":
            return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)
        if node.op == "intersection":
            return np.max([b[0] for b in boxes], axis=0), np.min([b[1] for b in boxes], axis=0)
        return boxes[0]
    raise TypeError(f"not a CSG node: {node!r}")


def leaves(node: CsgNode, matrix: Optional[np.ndarray] = None) -> list[tuple[CsgNode, np.ndarray]]:
    """Primitive leaves in depth-first order with their local-to-world matrices."""
    matrix = np.eye(4) if matrix is None else matrix
    if isinstance(node, Transform):
        return leaves(node.child, matrix @ node.matrix)
    if isinstance(node, Boolean):
        out = []
        for child in node.children:
            out.extend(leaves(child, matrix))
        return out
    return [(node, matrix)]


# --------------------------------------------------------------------------
# Point clouds


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``points`` are ``(raw - center) * scale``; raw clouds have center 0, scale 1."""

    points: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __len__(self):
        return len(self.points)

    def raw_points(self) -> np.ndarray:
        return self.points / self.scale + self.center


def normalize(cloud: PointCloud, reference: Optional[PointCloud] = None) -> PointCloud:
    """Center on the bounding box and scale the longest edge to 1.

    With ``reference`` the reference cloud's frame is reused instead, so two
    clouds can be compared in one shared coordinate system.
    """
    if len(cloud.points) == 0:
        raise ZeroExtent("empty point cloud")
    raw = cloud.raw_points()
    if reference is not None:
        center, scale = np.asarray(reference.center, dtype=float), float(reference.scale)
    else:
        lo, hi = raw.min(axis=0), raw.max(axis=0)
        if np.linalg.norm(hi - lo) == 0:
            raise ZeroExtent("point cloud has zero extent")
        center = (lo + hi) / 2
        scale = 1.0 / float((hi - lo).max())
    return PointCloud((raw - center) * scale, center, scale)


def _leaf_area(leaf: CsgNode) -> float:
    if isinstance(leaf, Cube):
        a, b, c = leaf.size
        return 2 * (a * b + b * c + a * c)
    if isinstance(leaf, Sphere):
        return 4 * math.pi * leaf.radius ** 2
    r1, r2, h = leaf.r1, leaf.r2, leaf.height
    return math.pi * (r1 * r1 + r2 * r2 + (r1 + r2) * math.hypot(r1 - r2, h))


def _sample_leaf(leaf: CsgNode, count: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(leaf, Sphere):
        d = rng.normal(size=(count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * leaf.radius
    if isinstance(leaf, Cube):
        size = np.asarray(leaf.size)
        face_areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]] * 2)
        faces = rng.choice(6, size=count, p=face_areas / face_areas.sum())
        pts = rng.random((count, 3)) * size
        axis = faces % 3
        pts[np.arange(count), axis] = np.where(faces < 3, 0.0, size[axis])
        return pts - size / 2 if leaf.center else pts
    r1, r2, h = leaf.r1, leaf.r2, leaf.height
    areas = np.array([math.pi * r1 * r1, math.pi * r2 * r2, math.pi * (r1 + r2) * math.hypot(r1 - r2, h)])
    part = rng.choice(3, size=count, p=areas / areas.sum())
    u, v = rng.random(count), rng.random(count)
    theta = 2 * math.pi * rng.random(count)
    # lateral: height fraction with density proportional to the local radius
    t = u * (r1 + r2) / (r1 + np.sqrt(r1 * r1 + u * (r2 * r2 - r1 * r1)))
    rho = np.where(part == 0, r1 * np.sqrt(v), np.where(part == 1, r2 * np.sqrt(v), r1 + (r2 - r1) * t))
    z = np.where(part == 0, 0.0, np.where(part == 1, h, t * h)) + _cyl_z0(leaf)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed % (1 << 63), *keys]))


def sample_surface(node: CsgNode, n: int = DEFAULT_POINTS, seed: int = 0, oversample: int = 4, retries: int = 3) -> PointCloud:
    """Sample ``n`` points on the boundary of the solid.

    Candidates are drawn area-uniformly on every leaf surface (each leaf
    has its own random stream keyed by seed and leaf index) and kept when
    the combined pseudo-SDF is within the boundary tolerance there.
    """
    if n < 1:
        raise ValueError("n must be positive")
    lo, hi = bounds(node)
    eps = BOUNDARY_EPS * float(np.linalg.norm(hi - lo))
    parts = leaves(node)
    world_areas = np.array([
        _leaf_area(leaf) * abs(np.linalg.det(m[:3, :3])) ** (2.0 / 3.0) for leaf, m in parts
    ])
    weights = world_areas / world_areas.sum()

    for attempt in range(retries + 1):
        total = oversample * n * (2 ** attempt)
        chunks = []
        for index, ((leaf, m), w) in enumerate(zip(parts, weights)):
            count = max(16, int(math.ceil(total * w)))
            local = _sample_leaf(leaf, count, _stream(seed, attempt, index))
            chunks.append(_apply(m, local))
        candidates = np.concatenate(chunks)
        kept = candidates[np.abs(_sdf(node, candidates)) <= eps]
        if len(kept):
            pick = _stream(seed, attempt, len(parts), 1 << 20)
            if len(kept) >= n:
                idx = np.sort(pick.choice(len(kept), size=n, replace=False))
            else:
                idx = pick.integers(0, len(kept), size=n)
            return PointCloud(kept[idx])
    raise DegenerateGeometry("no surface points survived; the solid is empty")


def program_cloud(program_or_source, n: int = DEFAULT_POINTS, seed: int = 0) -> PointCloud:
    """Raw surface cloud of a program (or its source text)."""
    if isinstance(program_or_source, str):
        node = compile_source(program_or_source)
    else:
        node = evaluate(program_or_source)
    return sample_surface(node, n, seed)


# --------------------------------------------------------------------------
# Point cloud files


def write_xyz(path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, fmt="%.17g")


def read_xyz(path) -> PointCloud:
    pts = np.loadtxt(path, dtype=float, ndmin=2)
    return PointCloud(pts.reshape(-1, 3))


def write_ply(path, cloud: PointCloud) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype="<f8")
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.tobytes())


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "format binary_little_endian 1.0" not in header:
        raise ValueError("only binary little-endian PLY files are supported")
    count = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    props = [line.split()[1] for line in header if line.startswith("property")]
    dtype = {"double": "<f8", "float": "<f4"}[props[0]]
    pts = np.frombuffer(data[end:], dtype=dtype, count=count * 3).reshape(count, 3)
    return PointCloud(pts.astype(float))
