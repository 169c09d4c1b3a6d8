"""Quantization of spatial values in a program to a fixed number of bits.

Values are mapped affinely from the program's bounding-box range on the
matching axis onto the integers ``0 .. 2**bits``, so 8 bits yield a
maximum value of 256. Only translate offsets are spatial positions in this
language subset; sizes, radii, angles and loop bounds are left alone.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .csg import bounds, evaluate
from .syntax import Call, Num, Program, Vector, map_statements, reparse


def quantize_value(value: float, lo: float, hi: float, bits: int = 8) -> int:
    levels = 2 ** bits
    if hi <= lo:
        raise ValueError("empty quantization range")
    q = math.floor((value - lo) / (hi - lo) * levels + 0.5)
    return int(min(max(q, 0), levels))


def dequantize_value(q: int, lo: float, hi: float, bits: int = 8) -> float:
    return lo + q / 2 ** bits * (hi - lo)


def quantization_frame(program: Program) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``(lo, hi)`` of the compiled program's bounding box."""
    return bounds(evaluate(program))


def quantize(program: Program, bits: int = 8) -> Program:
    """Replace numeric translate-offset literals with their quantized integers.

    Offsets outside the bounding-box range clip to ``0`` or ``2**bits``.
    """
    lo, hi = quantization_frame(program)

    def visit(stmt):
        if not (isinstance(stmt, Call) and stmt.name == "translate"):
            return stmt
        offset = stmt.args[0] if stmt.args else stmt.kwarg("v")
        if not isinstance(offset, Vector):
            return stmt
        items = tuple(
            Num(float(quantize_value(item.value, lo[k], hi[k], bits)))
            if isinstance(item, Num) and k < 3 else item
            for k, item in enumerate(offset.items)
        )
        new_offset = Vector(items)
        if stmt.args:
            return replace(stmt, args=(new_offset,) + stmt.args[1:])
        return replace(stmt, kwargs=tuple((k, new_offset if k == "v" else v) for k, v in stmt.kwargs))

    stmts = [map_statements(s, visit) for s in program.statements]
    return reparse(stmts, program.trailing_comments)
