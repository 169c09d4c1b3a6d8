"""Program mutations for the eight CAD error types.

Every mutation edits exactly one block (or deletes / appends one), must
keep the program compilable and must change the geometry by more than
``VIS_DELTA`` in chamfer distance. Candidate edits are redrawn from
``(seed, attempt)`` for up to ``MAX_ATTEMPTS`` attempts.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .csg import CompileError, DegenerateGeometry, bounds, evaluate, normalize, sample_surface
from .metrics import chamfer
from .segment import GEOMETRY_KINDS, Block, BlockKind, BlockList, segment, splice
from .syntax import (
    PRIMITIVES,
    TRANSFORMS,
    Assign,
    Binary,
    Bool,
    Call,
    Expr,
    For,
    If,
    Num,
    Program,
    Range,
    Stmt,
    Unary,
    Vector,
    parse,
    print_program,
    reparse,
    rewrite_nth,
    strip_annotations,
    walk,
)

VIS_DELTA = 1e-3
VIS_POINTS = 4096
MAX_ATTEMPTS = 20

ROTATION_ANGLES = (30, 45, 60, 90, 120, 150, 180)
POSITION_RANGE = (0.2, 0.6)
SIZE_FACTORS = (0.4, 0.6, 1.6, 2.2)
CONSTANT_FACTORS = (0.5, 2.0)
LOGIC_DELTAS = (1, 2, 3)


class ErrorType(str, enum.Enum):
    PRIMITIVE = "primitive"
    ROTATION = "rotation"
    POSITION = "position"
    SIZE = "size"
    CONSTANT = "constant"
    LOGIC = "logic"
    MISSING_BLOCK = "missing_block"
    REDUNDANT_BLOCK = "redundant_block"
    NO_ERROR = "no_error"

    @property
    def label(self) -> str:
        return self.value.replace("_", " ")

    @classmethod
    def parse(cls, text) -> "ErrorType":
        """Accept spellings like ``"Rotation"``, ``"missing block"`` or ``"Size error"``."""
        if isinstance(text, ErrorType):
            return text
        key = re.sub(r"[\s\-]+", "_", str(text).strip().lower())
        key = re.sub(r"_?errors?$", "", key) or key
        aliases = {"missing": "missing_block", "redundant": "redundant_block", "none": "no_error",
                   "no": "no_error", "correct": "no_error", "noerror": "no_error"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown error type {text!r}") from None


ERROR_TYPES = tuple(t for t in ErrorType if t is not ErrorType.NO_ERROR)


class NotApplicable(ValueError):
    pass


class ExhaustedRetries(RuntimeError):
    pass


@dataclass(frozen=True)
class ErrorRecord:
    error_type: ErrorType
    block_id: int
    original_snippet: str = ""
    mutated_snippet: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "error_type": self.error_type.value,
            "block_id": self.block_id,
            "original_snippet": self.original_snippet,
            "mutated_snippet": self.mutated_snippet,
            "params": self.params,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ErrorRecord":
        return cls(ErrorType.parse(data["error_type"]), int(data["block_id"]),
                   data.get("original_snippet", ""), data.get("mutated_snippet", ""),
                   dict(data.get("params", {})))


# --------------------------------------------------------------------------
# expression helpers


def _num(v: float) -> Num:
    return Num(float(f"{v:.6g}"))


def _scaled(e: Expr, k: float) -> Expr:
    if isinstance(e, Num):
        return _num(e.value * k)
    return Binary("*", e, _num(k))


def _half(e: Expr) -> Expr:
    if isinstance(e, Num):
        return _num(e.value / 2)
    return Binary("/", e, Num(2.0))


def _shifted(e: Expr, delta: float) -> Expr:
    if isinstance(e, Num):
        return _num(e.value + delta)
    return Binary("+" if delta > 0 else "-", e, _num(abs(delta)))


def _vec(*items: Expr) -> Vector:
    return Vector(tuple(items))


def _nums(*values: float) -> Vector:
    return Vector(tuple(_num(v) for v in values))


def _is_primitive(s: Stmt) -> bool:
    return isinstance(s, Call) and s.name in PRIMITIVES


def _is_control(s: Stmt) -> bool:
    return isinstance(s, (For, If))


def _arg(call: Call, position: int, name: str) -> Optional[Expr]:
    if len(call.args) > position:
        return call.args[position]
    return call.kwarg(name)


def _set_arg(call: Call, position: int, name: str, value: Expr) -> Call:
    if len(call.args) > position:
        args = list(call.args)
        args[position] = value
        return replace(call, args=tuple(args))
    if call.kwarg(name) is not None:
        return replace(call, kwargs=tuple((k, value if k == name else v) for k, v in call.kwargs))
    return replace(call, kwargs=call.kwargs + ((name, value),))


def _keep_header(new: Stmt, old: Stmt) -> Stmt:
    return replace(new, comments=old.comments, block_id=old.block_id)


def _wrap(name: str, vector: Expr, child: Stmt) -> Call:
    return Call(name, (vector,), (), replace(child, comments=(), block_id=None),
                comments=child.comments, block_id=child.block_id)


# --------------------------------------------------------------------------
# primitive swap


def _primitive_box(call: Call):
    """Extent expressions ``(ex, ey, ez)`` and the local offset of the box center."""
    if call.name == "cube":
        size = _arg(call, 0, "size") or Num(1.0)
        center = _arg(call, 1, "center") or Bool(False)
        if not isinstance(center, Bool):
            return None
        if isinstance(size, Vector):
            if len(size.items) != 3:
                return None
            extent = size.items
        else:
            extent = (size, size, size)
        offset = None if center.value else tuple(_half(e) for e in extent)
        return extent, offset
    if call.name == "sphere":
        d = call.kwarg("d")
        diameter = d if d is not None else _scaled(_arg(call, 0, "r") or Num(1.0), 2)
        return (diameter,) * 3, None
    h = _arg(call, 0, "h") or Num(1.0)
    center = _arg(call, 3, "center") or Bool(False)
    if not isinstance(center, Bool):
        return None
    if call.kwarg("d") is not None:
        diameter = call.kwarg("d")
    else:
        r = call.kwarg("r") or _arg(call, 1, "r1") or Num(1.0)
        diameter = _scaled(r, 2)
    offset = None if center.value else (Num(0.0), Num(0.0), _half(h))
    return (diameter, diameter, h), offset


def _build_primitive(kind: str, extent) -> Stmt:
    ex, ey, ez = extent
    uniform = ex == ey == ez
    center = (("center", Bool(True)),)
    if kind == "cube":
        size = ex if uniform else _vec(ex, ey, ez)
        return Call("cube", (size,), center)
    if kind == "sphere":
        if uniform:
            return Call("sphere", (), (("r", _half(ex)),))
        return Call("scale", (_vec(ex, ey, ez),), (), Call("sphere", (), (("r", Num(0.5)),)))
    if ex == ey:
        return Call("cylinder", (), (("h", ez), ("r", _half(ex))) + center)
    return Call("scale", (_vec(ex, ey, Num(1.0)),), (),
                Call("cylinder", (), (("h", ez), ("r", Num(0.5))) + center))


def _swap_primitive(call: Call, target: str) -> Optional[Stmt]:
    box = _primitive_box(call)
    if box is None:
        return None
    extent, offset = box
    new = _build_primitive(target, extent)
    if offset is not None:
        new = Call("translate", (_vec(*offset),), (), new)
    return _keep_header(new, call)


# --------------------------------------------------------------------------
# mutation context


@dataclass
class _Context:
    program: Program
    blocks: BlockList
    lo: np.ndarray
    hi: np.ndarray
    annotated: bool

    def block_center(self, block: Block) -> np.ndarray:
        """Bounding-box center of one block's own geometry."""
        keep = []
        for other in self.blocks:
            if other.id == block.id:
                keep.extend(block.statements)
                break
            keep.extend(s for s in other.statements if not (other.kind in GEOMETRY_KINDS and s is other.main))
        keep.extend(s for b in self.blocks if b.kind is BlockKind.MODULE_DEF and b.id > block.id
                    for s in b.statements)
        try:
            lo, hi = bounds(evaluate(Program(tuple(keep))))
        except CompileError:
            lo, hi = self.lo, self.hi
        return (lo + hi) / 2


def _geometry_blocks(blocks: BlockList) -> list[Block]:
    return [b for b in blocks if b.kind in GEOMETRY_KINDS]


def _site_blocks(blocks: BlockList, predicate) -> list[Block]:
    return [b for b in blocks if any(predicate(s) for s in walk(b.main))]


def _constant_candidates(blocks: BlockList) -> list[int]:
    if not blocks.blocks or blocks.blocks[0].kind is not BlockKind.MACRO_SET:
        return []
    return [
        i for i, s in enumerate(blocks.blocks[0].statements)
        if isinstance(s, Assign) and (isinstance(s.value, Bool) or (isinstance(s.value, Num) and s.value.value != 0))
    ]


def applicable_types(program: Program) -> set[ErrorType]:
    """Error types for which the program has at least one eligible block."""
    blocks = segment(program)
    types = {ErrorType.NO_ERROR}
    if _site_blocks(blocks, _is_primitive):
        types |= {ErrorType.PRIMITIVE, ErrorType.SIZE}
    if _geometry_blocks(blocks):
        types |= {ErrorType.ROTATION, ErrorType.POSITION, ErrorType.REDUNDANT_BLOCK}
    if _constant_candidates(blocks):
        types.add(ErrorType.CONSTANT)
    if _site_blocks(blocks, _is_control):
        types.add(ErrorType.LOGIC)
    if sum(b.kind is not BlockKind.MACRO_SET for b in blocks) >= 2:
        types.add(ErrorType.MISSING_BLOCK)
    return types


# --------------------------------------------------------------------------
# per-type edits; each returns (block_id, replacement statements, params) or None


def _replace_main(block: Block, new_main: Stmt) -> list[Stmt]:
    return list(block.statements[:-1]) + [new_main]


def _edit_primitive(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, _site_blocks(ctx.blocks, _is_primitive))
    sites = [s for s in walk(block.main) if _is_primitive(s)]
    n = int(rng.integers(len(sites)))
    source = sites[n].name
    target = str(rng.choice([p for p in ("cube", "sphere", "cylinder") if p != source]))
    swapped = _swap_primitive(sites[n], target)
    if swapped is None:
        return None
    new_main = rewrite_nth(block.main, _is_primitive, n, lambda _: swapped)
    return block.id, _replace_main(block, new_main), {"from": source, "to": target}


def _chain(stmt: Stmt) -> list[Call]:
    out = []
    while isinstance(stmt, Call) and stmt.name in TRANSFORMS:
        out.append(stmt)
        stmt = stmt.child
    return out


def _literal_vec3(call: Call) -> Optional[list[float]]:
    v = _arg(call, 0, "a" if call.name == "rotate" else "v")
    if isinstance(v, Vector) and len(v.items) == 3 and all(isinstance(x, Num) for x in v.items):
        return [x.value for x in v.items]
    return None


def _replace_in_chain(stmt: Stmt, depth: int, new_call: Call) -> Stmt:
    if depth == 0:
        return new_call
    return replace(stmt, child=_replace_in_chain(stmt.child, depth - 1, new_call))


def _edit_rotation(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, _geometry_blocks(ctx.blocks))
    axis = int(rng.integers(3))
    delta = float(rng.choice(ROTATION_ANGLES)) * float(rng.choice((-1, 1)))
    main = block.main
    chain = _chain(main)
    rotates = [(i, c) for i, c in enumerate(chain) if c.name == "rotate" and _literal_vec3(c) is not None]
    if rotates:
        depth, call = rotates[0]
        angles = _literal_vec3(call)
        previous = angles[axis]
        angles[axis] = (previous + delta) % 360
        new_call = _set_arg(call, 0, "a", _nums(*angles))
        new_main = _replace_in_chain(main, depth, new_call)
        how = "altered"
    else:
        previous = 0.0
        angles = [0.0, 0.0, 0.0]
        angles[axis] = delta % 360
        if chain and chain[0].name == "translate":
            inner = Call("rotate", (_nums(*angles),), (), main.child)
            new_main = replace(main, child=inner)
        else:
            c = ctx.block_center(block)
            inner = Call("translate", (_nums(*(-c)),), (), strip_annotations(replace(main, comments=())))
            outer = Call("translate", (_nums(*c),), (), Call("rotate", (_nums(*angles),), (), inner))
            new_main = _keep_header(outer, main)
        how = "inserted"
    params = {"axis": "xyz"[axis], "parameter_index": axis, "angle": angles[axis],
              "previous": previous, "delta": delta, "edit": how}
    return block.id, _replace_main(block, new_main), params


def _offset(ctx: _Context, rng: np.random.Generator) -> list[float]:
    edges = ctx.hi - ctx.lo
    mags = rng.uniform(*POSITION_RANGE, size=3) * edges
    signs = rng.choice((-1.0, 1.0), size=3)
    return [float(f"{m * s:.3g}") for m, s in zip(mags, signs)]


def _moved(main: Stmt, offset: list[float]) -> Stmt:
    chain = _chain(main)
    if chain and chain[0].name == "translate" and _literal_vec3(chain[0]) is not None:
        current = _literal_vec3(chain[0])
        return _set_arg(main, 0, "v", _nums(*(a + b for a, b in zip(current, offset))))
    return _wrap("translate", _nums(*offset), main)


def _edit_position(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, _geometry_blocks(ctx.blocks))
    offset = _offset(ctx, rng)
    return block.id, _replace_main(block, _moved(block.main, offset)), {"offset": offset}


_SIZE_ARGS = {
    "cube": ((0, "size"),),
    "sphere": ((0, "r"), (-1, "d")),
    "cylinder": ((0, "h"), (1, "r1"), (2, "r2"), (-1, "r"), (-1, "d")),
}


def _edit_size(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, _site_blocks(ctx.blocks, _is_primitive))
    sites = [s for s in walk(block.main) if _is_primitive(s)]
    n = int(rng.integers(len(sites)))
    call = sites[n]
    present = [(pos, name) for pos, name in _SIZE_ARGS[call.name]
               if (pos >= 0 and len(call.args) > pos) or call.kwarg(name) is not None]
    if not present:
        return None
    pos, name = present[int(rng.integers(len(present)))]
    factor = float(rng.choice(SIZE_FACTORS))
    value = call.args[pos] if pos >= 0 and len(call.args) > pos else call.kwarg(name)
    params = {"primitive": call.name, "argument": name, "factor": factor}
    if isinstance(value, Vector) and value.items:
        k = int(rng.integers(len(value.items)))
        items = list(value.items)
        items[k] = _scaled(items[k], factor)
        new_value = Vector(tuple(items))
        params["component"] = k
    else:
        new_value = _scaled(value, factor)
    new_call = _set_arg(call, pos if pos >= 0 else 10 ** 6, name, new_value)
    new_main = rewrite_nth(block.main, _is_primitive, n, lambda _: new_call)
    return block.id, _replace_main(block, new_main), params


def _edit_constant(ctx: _Context, rng: np.random.Generator):
    block = ctx.blocks.blocks[0]
    index = _choice(rng, _constant_candidates(ctx.blocks))
    stmt = block.statements[index]
    if isinstance(stmt.value, Bool):
        new_value, params = Bool(not stmt.value.value), {"flipped": True}
    else:
        factor = float(rng.choice(CONSTANT_FACTORS))
        new_value, params = _scaled(stmt.value, factor), {"factor": factor}
    params.update(name=stmt.name, previous=_literal(stmt.value), new=_literal(new_value))
    stmts = list(block.statements)
    stmts[index] = replace(stmt, value=new_value)
    return block.id, stmts, params


def _literal(e: Expr):
    return e.value if isinstance(e, (Num, Bool)) else None


def _edit_logic(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, _site_blocks(ctx.blocks, _is_control))
    sites = [s for s in walk(block.main) if _is_control(s)]
    n = int(rng.integers(len(sites)))
    site = sites[n]
    if isinstance(site, If):
        cond = site.cond.operand if isinstance(site.cond, Unary) and site.cond.op == "!" else Unary("!", site.cond)
        new_site, params = replace(site, cond=cond), {"statement": "if", "negated": True}
    else:
        delta = int(rng.choice(LOGIC_DELTAS)) * int(rng.choice((-1, 1)))
        it = site.iterable
        if isinstance(it, Range):
            fields = ["start", "end"] + (["step"] if it.step is not None else [])
            which = fields[int(rng.integers(len(fields)))]
            new_it = replace(it, **{which: _shifted(getattr(it, which), delta)})
        elif isinstance(it, Vector) and it.items:
            k = int(rng.integers(len(it.items)))
            which = f"item{k}"
            items = list(it.items)
            items[k] = _shifted(items[k], delta)
            new_it = Vector(tuple(items))
        else:
            return None
        new_site, params = replace(site, iterable=new_it), {"statement": "for", "field": which, "delta": delta}
    new_main = rewrite_nth(block.main, _is_control, n, lambda _: new_site)
    return block.id, _replace_main(block, new_main), params


def _edit_missing(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, [b for b in ctx.blocks if b.kind is not BlockKind.MACRO_SET])
    return block.id, [], {"removed_kind": block.kind.value}


def _edit_redundant(ctx: _Context, rng: np.random.Generator):
    block = _choice(rng, _geometry_blocks(ctx.blocks))
    offset = _offset(ctx, rng)
    copy = _moved(strip_annotations(replace(block.main, comments=())), offset)
    new_id = len(ctx.blocks) + 1
    if ctx.annotated:
        copy = replace(copy, block_id=new_id)
    return new_id, [copy], {"copied_block": block.id, "offset": offset}


_EDITS = {
    ErrorType.PRIMITIVE: _edit_primitive,
    ErrorType.ROTATION: _edit_rotation,
    ErrorType.POSITION: _edit_position,
    ErrorType.SIZE: _edit_size,
    ErrorType.CONSTANT: _edit_constant,
    ErrorType.LOGIC: _edit_logic,
    ErrorType.MISSING_BLOCK: _edit_missing,
    ErrorType.REDUNDANT_BLOCK: _edit_redundant,
}


def _choice(rng: np.random.Generator, items: list):
    return items[int(rng.integers(len(items)))]


# --------------------------------------------------------------------------
# visibility


@lru_cache(maxsize=64)
def _reference_clouds(source: str, n: int, seed: int):
    node = evaluate(parse(source))
    ref = normalize(sample_surface(node, n, seed))
    again = normalize(sample_surface(node, n, seed + 1), ref)
    return ref, chamfer(ref, again)


def visible_change(original: Program, mutant: Program, n: int = VIS_POINTS, seed: int = 0) -> float:
    """Chamfer distance between the two programs' surfaces minus its sampling noise.

    Both clouds live in the original's normalization frame. The noise term is
    the chamfer distance between two independent samplings of the original.
    """
    ref, noise = _reference_clouds(print_program(original), n, seed)
    other = normalize(sample_surface(evaluate(mutant), n, seed), ref)
    return chamfer(ref, other) - noise


def _snippet(stmts) -> str:
    return print_program(Program(tuple(strip_annotations(s) for s in stmts)))


def mutate(program: Program, error_type, seed: int = 0) -> tuple[Program, ErrorRecord]:
    """Inject one error of ``error_type`` into ``program``."""
    error_type = ErrorType.parse(error_type)
    evaluate(program)  # precondition: the source compiles
    if error_type not in applicable_types(program):
        raise NotApplicable(f"{error_type.value} does not apply to this program")
    if error_type is ErrorType.NO_ERROR:
        return program, ErrorRecord(ErrorType.NO_ERROR, 0)

    blocks = segment(program)
    lo, hi = bounds(evaluate(program))
    annotated = any(s.block_id is not None for s in program.statements)
    ctx = _Context(program, blocks, lo, hi, annotated)
    edit = _EDITS[error_type]

    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed % (1 << 63), attempt])
        result = edit(ctx, rng)
        if result is None:
            continue
        block_id, stmts, params = result
        if error_type is ErrorType.REDUNDANT_BLOCK:
            mutant = reparse(list(program.statements) + stmts, program.trailing_comments)
            original_snippet = ""
        else:
            mutant = splice(blocks, {block_id: stmts})
            original_snippet = _snippet(blocks.get(block_id).statements)
        try:
            if visible_change(program, mutant) <= VIS_DELTA:
                continue
        except (CompileError, DegenerateGeometry):
            continue
        params["attempt"] = attempt
        record = ErrorRecord(error_type, block_id, original_snippet, _snippet(stmts), params)
        return mutant, record
    raise ExhaustedRetries(f"no visible {error_type.value} mutation after {MAX_ATTEMPTS} attempts")


def record_to_json_text(record: ErrorRecord) -> str:
    return json.dumps(record.to_json(), sort_keys=True, indent=2) + "\n"
