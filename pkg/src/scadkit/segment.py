"""Split a program into numbered blocks and put blocks back together."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .syntax import (
    BOOLEANS,
    TRANSFORMS,
    Assign,
    Call,
    For,
    Group,
    If,
    ModuleDef,
    Program,
    SourceSpan,
    Stmt,
    print_program,
    reparse,
    strip_annotations,
)


class EmptyProgram(ValueError):
    pass


class UnknownBlockId(KeyError):
    pass


class BlockKind(str, enum.Enum):
    MACRO_SET = "MacroSet"
    MODULE_DEF = "ModuleDef"
    CONTROL_FLOW = "ControlFlow"
    BOOLEAN_OP = "BooleanOp"
    PRIMITIVE = "Primitive"


GEOMETRY_KINDS = frozenset({BlockKind.CONTROL_FLOW, BlockKind.BOOLEAN_OP, BlockKind.PRIMITIVE})


@dataclass(frozen=True)
class Block:
    id: int
    kind: BlockKind
    statements: tuple[Stmt, ...]
    span: SourceSpan

    @property
    def main(self) -> Stmt:
        """The statement that gives the block its kind (last one; earlier ones are assignments)."""
        return self.statements[-1]

    def text(self) -> str:
        return print_program(Program(tuple(strip_annotations(s) for s in self.statements)))


@dataclass(frozen=True)
class BlockList:
    blocks: tuple[Block, ...]
    program: Program

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def get(self, block_id: int) -> Block:
        for block in self.blocks:
            if block.id == block_id:
                return block
        raise UnknownBlockId(block_id)


def statement_kind(stmt: Stmt) -> BlockKind:
    """Kind of the block a top-level statement opens.

    Transform chains take the kind of whatever they end in, so
    ``translate(...) rotate(...) cube(...)`` is a primitive block. Calls to
    user modules count as primitive blocks (one placed component).
    """
    while isinstance(stmt, Call) and stmt.name in TRANSFORMS and stmt.child is not None:
        stmt = stmt.child
    if isinstance(stmt, Assign):
        return BlockKind.MACRO_SET
    if isinstance(stmt, ModuleDef):
        return BlockKind.MODULE_DEF
    if isinstance(stmt, (For, If)):
        return BlockKind.CONTROL_FLOW
    if isinstance(stmt, Group):
        return BlockKind.BOOLEAN_OP
    if isinstance(stmt, Call) and stmt.name in BOOLEANS:
        return BlockKind.BOOLEAN_OP
    return BlockKind.PRIMITIVE


def _span_of(stmts: Sequence[Stmt]) -> SourceSpan:
    return SourceSpan(stmts[0].span.byte_start, stmts[-1].span.byte_end, stmts[0].span.line)


def segment(program: Program) -> BlockList:
    stmts = program.statements
    if not stmts:
        raise EmptyProgram("program has no statements")

    groups: list[tuple[BlockKind, list[Stmt]]] = []
    i = 0
    while i < len(stmts) and isinstance(stmts[i], Assign):
        i += 1
    if i:
        groups.append((BlockKind.MACRO_SET, list(stmts[:i])))

    pending: list[Stmt] = []
    for stmt in stmts[i:]:
        if isinstance(stmt, Assign):
            pending.append(stmt)
            continue
        groups.append((statement_kind(stmt), pending + [stmt]))
        pending = []
    if pending:
        # assignments after the last geometry statement stay with that block
        groups[-1][1].extend(pending)

    blocks = tuple(
        Block(n, kind, tuple(group), _span_of(group))
        for n, (kind, group) in enumerate(groups, start=1)
    )
    return BlockList(blocks, program)


def annotate(program: Program) -> Program:
    """Return ``program`` with ``// Block <n>`` comments matching :func:`segment`."""
    blocks = segment(program)
    stmts: list[Stmt] = []
    for block in blocks:
        for k, stmt in enumerate(block.statements):
            stmt = strip_annotations(stmt)
            if k == 0:
                stmt = replace(stmt, block_id=block.id)
            stmts.append(stmt)
    return reparse(stmts, program.trailing_comments)


def splice(blocks: BlockList, replace_map: Mapping[int, Sequence[Stmt]]) -> Program:
    """Replace the statements of selected blocks; an empty list deletes the block.

    Replacement statements inherit the annotation of the block they replace
    when that block was annotated. Untouched blocks are carried over as-is.
    """
    known = {b.id for b in blocks}
    for key in replace_map:
        if key not in known:
            raise UnknownBlockId(key)
    stmts: list[Stmt] = []
    for block in blocks:
        if block.id not in replace_map:
            stmts.extend(block.statements)
            continue
        new = list(replace_map[block.id])
        old_id = block.statements[0].block_id
        if new and old_id is not None and new[0].block_id is None:
            new[0] = replace(new[0], block_id=old_id)
        stmts.extend(new)
    return reparse(stmts, blocks.program.trailing_comments)


def block_to_json(block: Block) -> dict:
    return {
        "id": block.id,
        "kind": block.kind.value,
        "span": {"start": block.span.byte_start, "end": block.span.byte_end, "line": block.span.line},
        "text": block.text(),
    }
