"""Lexer, parser and printer for the OpenSCAD subset handled by scadkit.

The accepted language covers assignments, module definitions and calls,
``for`` loops over ranges or vectors, ``if``/``else``, the primitives
``cube``/``sphere``/``cylinder``, the transforms ``translate``/``rotate``/
``scale``/``mirror`` and the booleans ``union``/``difference``/
``intersection``, plus numeric, boolean and vector expressions.

Comments are kept. A comment of the form ``// Block <n>`` annotates the
statement that follows it; every other comment is carried along verbatim
as a leading comment of the next statement (or as a trailing comment of
the enclosing group / program) and has no meaning.

Source offsets in :class:`SourceSpan` are character offsets into the
LF-normalised source text (identical to byte offsets for ASCII input).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Union

PRIMITIVES = frozenset({"cube", "sphere", "cylinder"})
TRANSFORMS = frozenset({"translate", "rotate", "scale", "mirror"})
BOOLEANS = frozenset({"union", "difference", "intersection"})
KEYWORDS = frozenset({"module", "for", "if", "else", "true", "false"})

BLOCK_COMMENT_RE = re.compile(r"^//\s*Block\s+(\d+)\s*$")


class LexError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class ParseError(ValueError):
    def __init__(self, message: str, span: "SourceSpan", expected: tuple[str, ...] = ()):
        detail = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at line {span.line}{detail}")
        self.span = span
        self.expected = expected


@dataclass(frozen=True)
class SourceSpan:
    byte_start: int
    byte_end: int
    line: int

    def __post_init__(self):
        if self.byte_start > self.byte_end:
            raise ValueError("span start after span end")


NO_SPAN = SourceSpan(0, 0, 1)


# --------------------------------------------------------------------------
# Tokens

_PUNCT = {
    "(": "LPAREN", ")": "RPAREN", "[": "LBRACK", "]": "RBRACK",
    "{": "LBRACE", "}": "RBRACE", ";": "SEMI", ",": "COMMA", ":": "COLON",
}
_TWO_CHAR_OPS = ("<=", ">=", "==", "!=", "&&", "||")
_ONE_CHAR_OPS = "+-*/%<>!"

_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int
    line: int
    column: int

    def __repr__(self):
        return f"{self.kind}({self.text!r})"


def _normalise_newlines(source: str) -> str:
    return source.replace("\r\n", "\n")


def tokenize(source: str) -> list[Token]:
    """Split ``source`` into tokens; whitespace is dropped, comments are kept."""
    source = _normalise_newlines(source)
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)

    while pos < n:
        ch = source[pos]
        col = pos - line_start + 1
        if ch == "\n":
            pos += 1
            line += 1
            line_start = pos
            continue
        if ch in " \t\r\f\v":
            pos += 1
            continue
        if source.startswith("//", pos):
            end = source.find("\n", pos)
            end = n if end < 0 else end
            tokens.append(Token("COMMENT", source[pos:end].rstrip(), pos, end, line, col))
            pos = end
            continue
        if source.startswith("/*", pos):
            end = source.find("*/", pos + 2)
            if end < 0:
                raise LexError("unterminated block comment", line, col)
            end += 2
            text = source[pos:end]
            tokens.append(Token("COMMENT", text, pos, end, line, col))
            newlines = text.count("\n")
            if newlines:
                line += newlines
                line_start = pos + text.rfind("\n") + 1
            pos = end
            continue
        if ch in _PUNCT:
            tokens.append(Token(_PUNCT[ch], ch, pos, pos + 1, line, col))
            pos += 1
            continue
        two = source[pos:pos + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(Token("OP", two, pos, pos + 2, line, col))
            pos += 2
            continue
        if ch == "=":
            tokens.append(Token("EQ", ch, pos, pos + 1, line, col))
            pos += 1
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(Token("OP", ch, pos, pos + 1, line, col))
            pos += 1
            continue
        m = _NUMBER_RE.match(source, pos)
        if m:
            tokens.append(Token("NUMBER", m.group(), pos, m.end(), line, col))
            pos = m.end()
            continue
        m = _IDENT_RE.match(source, pos)
        if m:
            word = m.group()
            kind = "KEYWORD" if word in KEYWORDS else "IDENT"
            tokens.append(Token(kind, word, pos, m.end(), line, col))
            pos = m.end()
            continue
        raise LexError(f"illegal character {ch!r}", line, col)
    return tokens


# --------------------------------------------------------------------------
# AST
#
# Spans and source text never take part in equality: two trees are equal
# when they have the same structure, values, annotations and comments.


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Bool:
    value: bool


@dataclass(frozen=True)
class Vector:
    items: tuple["Expr", ...]

    @property
    def arity(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "!"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Range:
    start: "Expr"
    step: Optional["Expr"]
    end: "Expr"


Expr = Union[Num, Bool, Vector, Var, Unary, Binary, Range]


@dataclass(frozen=True)
class Assign:
    name: str
    value: Expr
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)
    block_id: Optional[int] = None
    comments: tuple[str, ...] = ()


@dataclass(frozen=True)
class Param:
    name: str
    default: Optional[Expr] = None


@dataclass(frozen=True)
class ModuleDef:
    name: str
    params: tuple[Param, ...]
    body: tuple["Stmt", ...]
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)
    block_id: Optional[int] = None
    comments: tuple[str, ...] = ()


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[Expr, ...] = ()
    kwargs: tuple[tuple[str, Expr], ...] = ()
    child: Optional["Stmt"] = None
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)
    block_id: Optional[int] = None
    comments: tuple[str, ...] = ()

    def kwarg(self, name: str) -> Optional[Expr]:
        for key, value in self.kwargs:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class Group:
    body: tuple["Stmt", ...]
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)
    block_id: Optional[int] = None
    comments: tuple[str, ...] = ()
    trailing_comments: tuple[str, ...] = ()


@dataclass(frozen=True)
class For:
    var: str
    iterable: Expr
    body: "Stmt"
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)
    block_id: Optional[int] = None
    comments: tuple[str, ...] = ()


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    orelse: Optional["Stmt"] = None
    span: SourceSpan = field(default=NO_SPAN, compare=False, repr=False)
    block_id: Optional[int] = None
    comments: tuple[str, ...] = ()


Stmt = Union[Assign, ModuleDef, Call, Group, For, If]


@dataclass(frozen=True)
class Program:
    statements: tuple[Stmt, ...]
    source_text: str = field(default="", compare=False, repr=False)
    trailing_comments: tuple[str, ...] = ()


# --------------------------------------------------------------------------
# Parser

_COMPARISONS = ("<", "<=", ">", ">=", "==", "!=")
_BINARY_LEVELS = (("||",), ("&&",), _COMPARISONS, ("+", "-"), ("*", "/", "%"))


class _Parser:
    def __init__(self, source: str):
        self.source = _normalise_newlines(source)
        self.tokens = tokenize(self.source)
        self.pos = 0

    # token helpers
    def peek(self, offset: int = 0) -> Optional[Token]:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == kind and (text is None or tok.text == text)

    def span_here(self) -> SourceSpan:
        tok = self.peek()
        if tok is None:
            end = len(self.source)
            return SourceSpan(end, end, self.source.count("\n") + 1)
        return SourceSpan(tok.start, tok.end, tok.line)

    def fail(self, message: str, *expected: str):
        tok = self.peek()
        found = "end of input" if tok is None else repr(tok.text)
        raise ParseError(f"{message}, found {found}", self.span_here(), tuple(expected))

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        if not self.at(kind, text):
            self.fail("unexpected token", text or kind)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def skip_comments(self) -> None:
        # comments inside expressions carry no statement to attach to
        while self.at("COMMENT"):
            self.pos += 1

    def take_comments(self) -> tuple[Optional[int], tuple[str, ...]]:
        block_id, comments = None, []
        while self.at("COMMENT"):
            text = self.tokens[self.pos].text
            self.pos += 1
            m = BLOCK_COMMENT_RE.match(text)
            if m:
                # a later Block comment wins over an earlier one
                block_id = int(m.group(1))
            else:
                comments.append(text)
        return block_id, tuple(comments)

    # statements
    def parse_program(self) -> Program:
        stmts, trailing = self.statement_list(closing=None)
        return Program(tuple(stmts), self.source, trailing)

    def statement_list(self, closing: Optional[str]) -> tuple[list[Stmt], tuple[str, ...]]:
        stmts: list[Stmt] = []
        while True:
            block_id, comments = self.take_comments()
            while self.at("SEMI"):
                self.pos += 1
                more_id, more = self.take_comments()
                block_id = more_id if more_id is not None else block_id
                comments += more
            done = self.peek() is None if closing is None else self.at(closing)
            if done:
                trailing = comments
                if block_id is not None:
                    trailing = comments + (f"// Block {block_id}",)
                return stmts, trailing
            if self.peek() is None:
                self.fail("unexpected end of input", "}")
            stmts.append(self.statement(block_id, comments))

    def statement(self, block_id: Optional[int], comments: tuple[str, ...]) -> Stmt:
        tok = self.peek()
        start = tok.start
        line = tok.line
        if tok.kind == "KEYWORD" and tok.text == "module":
            node = self.module_def()
        elif tok.kind == "KEYWORD" and tok.text == "for":
            node = self.for_stmt()
        elif tok.kind == "KEYWORD" and tok.text == "if":
            node = self.if_stmt()
        elif tok.kind == "LBRACE":
            self.pos += 1
            body, trailing = self.statement_list(closing="RBRACE")
            self.expect("RBRACE")
            node = Group(tuple(body), trailing_comments=trailing)
        elif tok.kind == "IDENT" and self.peek(1) is not None and self.peek(1).kind == "EQ":
            name = self.expect("IDENT").text
            self.expect("EQ")
            value = self.expression()
            self.skip_comments()
            self.expect("SEMI")
            node = Assign(name, value)
        elif tok.kind == "IDENT":
            node = self.call()
        else:
            self.fail("expected a statement", "IDENT", "module", "for", "if", "{")
        end = self.tokens[self.pos - 1].end
        return _with(node, span=SourceSpan(start, end, line), block_id=block_id, comments=comments)

    def child_statement(self) -> Stmt:
        block_id, comments = self.take_comments()
        if self.peek() is None:
            self.fail("expected a child statement", "IDENT", "{")
        if self.at("SEMI"):
            self.fail("expected a child statement", "IDENT", "{")
        stmt = self.statement(block_id, comments)
        if isinstance(stmt, (Assign, ModuleDef)):
            raise ParseError("assignment or module definition cannot be a child", stmt.span)
        return stmt

    def module_def(self) -> ModuleDef:
        self.expect("KEYWORD", "module")
        name = self.expect("IDENT").text
        self.expect("LPAREN")
        params: list[Param] = []
        self.skip_comments()
        while not self.at("RPAREN"):
            pname = self.expect("IDENT").text
            default = None
            if self.at("EQ"):
                self.pos += 1
                default = self.expression()
            params.append(Param(pname, default))
            self.skip_comments()
            if not self.at("RPAREN"):
                self.expect("COMMA")
                self.skip_comments()
        self.expect("RPAREN")
        self.skip_comments()
        if self.at("LBRACE"):
            self.pos += 1
            body, _ = self.statement_list(closing="RBRACE")
            self.expect("RBRACE")
        else:
            body = [self.child_statement()]
        return ModuleDef(name, tuple(params), tuple(body))

    def for_stmt(self) -> For:
        self.expect("KEYWORD", "for")
        self.expect("LPAREN")
        var = self.expect("IDENT").text
        self.expect("EQ")
        iterable = self.expression()
        self.skip_comments()
        self.expect("RPAREN")
        return For(var, iterable, self.child_statement())

    def if_stmt(self) -> If:
        self.expect("KEYWORD", "if")
        self.expect("LPAREN")
        cond = self.expression()
        self.skip_comments()
        self.expect("RPAREN")
        then = self.child_statement()
        orelse = None
        save = self.pos
        self.skip_comments()
        if self.at("KEYWORD", "else"):
            self.pos += 1
            orelse = self.child_statement()
        else:
            self.pos = save
        return If(cond, then, orelse)

    def call(self) -> Call:
        name_tok = self.expect("IDENT")
        name = name_tok.text
        self.expect("LPAREN")
        args: list[Expr] = []
        kwargs: list[tuple[str, Expr]] = []
        self.skip_comments()
        while not self.at("RPAREN"):
            if self.at("IDENT") and self.peek(1) is not None and self.peek(1).kind == "EQ":
                key = self.expect("IDENT").text
                self.expect("EQ")
                kwargs.append((key, self.expression()))
            else:
                if kwargs:
                    self.fail("positional argument after named argument")
                args.append(self.expression())
            self.skip_comments()
            if not self.at("RPAREN"):
                self.expect("COMMA")
                self.skip_comments()
        self.expect("RPAREN")
        self.skip_comments_before_child()
        child = None
        if self.at("SEMI"):
            self.pos += 1
        else:
            child = self.child_statement()
        span = SourceSpan(name_tok.start, self.tokens[self.pos - 1].end, name_tok.line)
        if name in PRIMITIVES and child is not None:
            raise ParseError(f"primitive {name!r} cannot take a child", span)
        if (name in TRANSFORMS or name in BOOLEANS) and child is None:
            raise ParseError(f"{name!r} requires a child statement", span)
        return Call(name, tuple(args), tuple(kwargs), child)

    def skip_comments_before_child(self) -> None:
        # only plain `;` may follow directly; comments stay for the child
        if self.at("COMMENT"):
            save = self.pos
            self.skip_comments()
            if self.at("SEMI"):
                return
            self.pos = save

    # expressions
    def expression(self, level: int = 0) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        lhs = self.expression(level + 1)
        ops = _BINARY_LEVELS[level]
        while True:
            self.skip_comments()
            tok = self.peek()
            if tok is None or tok.kind != "OP" or tok.text not in ops:
                return lhs
            self.pos += 1
            rhs = self.expression(level + 1)
            lhs = Binary(tok.text, lhs, rhs)

    def unary(self) -> Expr:
        self.skip_comments()
        if self.at("OP", "-") or self.at("OP", "!") or self.at("OP", "+"):
            op = self.tokens[self.pos].text
            self.pos += 1
            if op == "-" and self.at("NUMBER"):
                return Num(-float(self.expect("NUMBER").text))
            operand = self.unary()
            if op == "+":
                return operand
            return Unary(op, operand)
        return self.primary()

    def primary(self) -> Expr:
        self.skip_comments()
        tok = self.peek()
        if tok is None:
            self.fail("expected an expression", "NUMBER", "IDENT", "[", "(")
        if tok.kind == "NUMBER":
            self.pos += 1
            return Num(float(tok.text))
        if tok.kind == "KEYWORD" and tok.text in ("true", "false"):
            self.pos += 1
            return Bool(tok.text == "true")
        if tok.kind == "IDENT":
            self.pos += 1
            return Var(tok.text)
        if tok.kind == "LPAREN":
            self.pos += 1
            inner = self.expression()
            self.skip_comments()
            self.expect("RPAREN")
            return inner
        if tok.kind == "LBRACK":
            return self.bracket()
        self.fail("expected an expression", "NUMBER", "IDENT", "[", "(")

    def bracket(self) -> Expr:
        self.expect("LBRACK")
        self.skip_comments()
        if self.at("RBRACK"):
            self.pos += 1
            return Vector(())
        first = self.expression()
        self.skip_comments()
        if self.at("COLON"):
            self.pos += 1
            second = self.expression()
            self.skip_comments()
            if self.at("COLON"):
                self.pos += 1
                third = self.expression()
                self.skip_comments()
                self.expect("RBRACK")
                return Range(first, second, third)
            self.expect("RBRACK")
            return Range(first, None, second)
        items = [first]
        while self.at("COMMA"):
            self.pos += 1
            self.skip_comments()
            if self.at("RBRACK"):
                break
            items.append(self.expression())
            self.skip_comments()
        self.expect("RBRACK")
        return Vector(tuple(items))


def _with(node, **changes):
    return replace(node, **changes)


def parse(source: str) -> Program:
    """Parse OpenSCAD source into a :class:`Program`.

    Raises :class:`LexError` or :class:`ParseError` on the first problem.
    Unknown call names are accepted as user module calls.
    """
    return _Parser(source).parse_program()


# --------------------------------------------------------------------------
# Printer

_PRECEDENCE = {op: level for level, ops in enumerate(_BINARY_LEVELS) for op in ops}
_UNARY_LEVEL = len(_BINARY_LEVELS)
INDENT = "    "


def format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def format_expr(expr: Expr, min_level: int = 0) -> str:
    """Render ``expr`` with the fewest parentheses that keep its structure."""
    if isinstance(expr, Num):
        return format_number(expr.value)
    if isinstance(expr, Bool):
        return "true" if expr.value else "false"
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Vector):
        return "[" + ", ".join(format_expr(e) for e in expr.items) + "]"
    if isinstance(expr, Range):
        parts = [expr.start] + ([expr.step] if expr.step is not None else []) + [expr.end]
        return "[" + " : ".join(format_expr(e) for e in parts) + "]"
    if isinstance(expr, Unary):
        operand = format_expr(expr.operand, _UNARY_LEVEL)
        if expr.op == "-" and isinstance(expr.operand, Num):
            # keep "-(5)" distinct from the folded literal "-5"
            operand = f"({operand})"
        text = f"{expr.op}{operand}"
        return f"({text})" if min_level > _UNARY_LEVEL else text
    if isinstance(expr, Binary):
        level = _PRECEDENCE[expr.op]
        lhs = format_expr(expr.lhs, level)
        rhs = format_expr(expr.rhs, level + 1)
        text = f"{lhs} {expr.op} {rhs}"
        return f"({text})" if level < min_level else text
    raise TypeError(f"not an expression: {expr!r}")


def _format_args(call: Call) -> str:
    parts = [format_expr(a) for a in call.args]
    parts += [f"{k}={format_expr(v)}" for k, v in call.kwargs]
    return ", ".join(parts)


def _header_lines(stmt: Stmt, indent: str) -> list[str]:
    lines = []
    for comment in stmt.comments:
        lines.extend(indent + c if i == 0 else c for i, c in enumerate(comment.split("\n")))
    if stmt.block_id is not None:
        lines.append(f"{indent}// Block {stmt.block_id}")
    return lines


def _format_body(stmts, trailing, depth: int) -> list[str]:
    lines = []
    for s in stmts:
        lines.extend(format_stmt(s, depth))
    lines.extend(INDENT * depth + c for c in trailing)
    return lines


def _attach_child(head: str, child: Stmt, depth: int) -> list[str]:
    """Lines for ``head`` followed by its child statement."""
    indent = INDENT * depth
    if child.comments or child.block_id is not None:
        return [indent + head] + format_stmt(child, depth + 1)
    child_lines = format_stmt(child, depth)
    first = child_lines[0][len(indent):]
    return [f"{indent}{head} {first}"] + child_lines[1:]


def format_stmt(stmt: Stmt, depth: int = 0) -> list[str]:
    indent = INDENT * depth
    lines = _header_lines(stmt, indent)
    if isinstance(stmt, Assign):
        lines.append(f"{indent}{stmt.name} = {format_expr(stmt.value)};")
    elif isinstance(stmt, Call):
        head = f"{stmt.name}({_format_args(stmt)})"
        if stmt.child is None:
            lines.append(f"{indent}{head};")
        else:
            lines.extend(_attach_child(head, stmt.child, depth))
    elif isinstance(stmt, Group):
        lines.append(indent + "{")
        lines.extend(_format_body(stmt.body, stmt.trailing_comments, depth + 1))
        lines.append(indent + "}")
    elif isinstance(stmt, ModuleDef):
        params = ", ".join(
            p.name if p.default is None else f"{p.name}={format_expr(p.default)}"
            for p in stmt.params
        )
        lines.append(f"{indent}module {stmt.name}({params}) {{")
        lines.extend(_format_body(stmt.body, (), depth + 1))
        lines.append(indent + "}")
    elif isinstance(stmt, For):
        head = f"for ({stmt.var} = {format_expr(stmt.iterable)})"
        lines.extend(_attach_child(head, stmt.body, depth))
    elif isinstance(stmt, If):
        head = f"if ({format_expr(stmt.cond)})"
        then_lines = _attach_child(head, stmt.then, depth)
        if stmt.orelse is None:
            lines.extend(then_lines)
        else:
            else_lines = _attach_child("else", stmt.orelse, depth)
            if isinstance(stmt.then, Group) and not stmt.then.comments and stmt.then.block_id is None:
                then_lines[-1] += " " + else_lines[0].lstrip()
                else_lines = else_lines[1:]
            lines.extend(then_lines + else_lines)
    else:
        raise TypeError(f"not a statement: {stmt!r}")
    return lines


def print_program(program: Program) -> str:
    """Canonical source text: one statement per line, 4-space indentation."""
    lines = _format_body(program.statements, program.trailing_comments, 0)
    return "".join(line + "\n" for line in lines)


def reparse(statements, trailing_comments: tuple[str, ...] = ()) -> Program:
    """Build a program from statements with spans that match its printed text."""
    return parse(print_program(Program(tuple(statements), "", tuple(trailing_comments))))


def strip_annotations(stmt: Stmt) -> Stmt:
    """Copy of ``stmt`` with every block-ID annotation removed."""
    changes = {"block_id": None}
    if isinstance(stmt, (Group, ModuleDef)):
        changes["body"] = tuple(strip_annotations(s) for s in stmt.body)
    elif isinstance(stmt, Call) and stmt.child is not None:
        changes["child"] = strip_annotations(stmt.child)
    elif isinstance(stmt, For):
        changes["body"] = strip_annotations(stmt.body)
    elif isinstance(stmt, If):
        changes["then"] = strip_annotations(stmt.then)
        if stmt.orelse is not None:
            changes["orelse"] = strip_annotations(stmt.orelse)
    return _with(stmt, **changes)


def to_json(node):
    """Plain-JSON view of an AST node (used by ``scad parse --ast-json``)."""
    if isinstance(node, Program):
        return {
            "type": "Program",
            "statements": [to_json(s) for s in node.statements],
            "trailing_comments": list(node.trailing_comments),
        }
    if isinstance(node, (list, tuple)):
        return [to_json(x) for x in node]
    if isinstance(node, SourceSpan):
        return {"start": node.byte_start, "end": node.byte_end, "line": node.line}
    if hasattr(node, "__dataclass_fields__"):
        out = {"type": type(node).__name__}
        for name in node.__dataclass_fields__:
            value = getattr(node, name)
            if name == "comments" and not value:
                continue
            if name == "block_id" and value is None:
                continue
            out[name] = to_json(value)
        return out
    return node


def substatements(stmt: Stmt) -> list[Stmt]:
    """Direct child statements of ``stmt``."""
    if isinstance(stmt, (Group, ModuleDef)):
        return list(stmt.body)
    if isinstance(stmt, Call):
        return [] if stmt.child is None else [stmt.child]
    if isinstance(stmt, For):
        return [stmt.body]
    if isinstance(stmt, If):
        return [stmt.then] + ([] if stmt.orelse is None else [stmt.orelse])
    return []


def walk(stmt: Stmt):
    """Pre-order iteration over ``stmt`` and everything nested in it."""
    yield stmt
    for sub in substatements(stmt):
        yield from walk(sub)


def map_statements(stmt: Stmt, fn) -> Stmt:
    """Rebuild ``stmt`` bottom-up, passing every (rebuilt) statement through ``fn``."""
    if isinstance(stmt, (Group, ModuleDef)):
        stmt = _with(stmt, body=tuple(map_statements(s, fn) for s in stmt.body))
    elif isinstance(stmt, Call) and stmt.child is not None:
        stmt = _with(stmt, child=map_statements(stmt.child, fn))
    elif isinstance(stmt, For):
        stmt = _with(stmt, body=map_statements(stmt.body, fn))
    elif isinstance(stmt, If):
        changes = {"then": map_statements(stmt.then, fn)}
        if stmt.orelse is not None:
            changes["orelse"] = map_statements(stmt.orelse, fn)
        stmt = _with(stmt, **changes)
    return fn(stmt)


def with_substatements(stmt: Stmt, subs: list[Stmt]) -> Stmt:
    """Inverse of :func:`substatements`: ``stmt`` with its children swapped out."""
    if isinstance(stmt, (Group, ModuleDef)):
        return _with(stmt, body=tuple(subs))
    if isinstance(stmt, Call):
        return stmt if stmt.child is None else _with(stmt, child=subs[0])
    if isinstance(stmt, For):
        return _with(stmt, body=subs[0])
    if isinstance(stmt, If):
        return _with(stmt, then=subs[0], orelse=subs[1] if stmt.orelse is not None else None)
    return stmt


def rewrite_nth(stmt: Stmt, predicate, n: int, fn) -> Stmt:
    """Apply ``fn`` to the ``n``-th statement (pre-order, as :func:`walk`) matching ``predicate``."""
    counter = 0

    def visit(s: Stmt) -> Stmt:
        nonlocal counter
        if predicate(s):
            k = counter
            counter += 1
            if k == n:
                return fn(s)
        subs = substatements(s)
        if not subs:
            return s
        return with_substatements(s, [visit(x) for x in subs])

    return visit(stmt)
