"""Reward-program language: lexer, parser, canonical printer.

Grammar::

    program  := ["stage" INT] term*
    term     := "term" NAME "{" expr "}" "@" NUMBER
    expr     := sum [("<" | "<=" | ">" | ">=" | "==" | "!=") sum]
    sum      := product (("+" | "-") product)*
    product  := unary (("*" | "/") unary)*
    unary    := "-" unary | atom
    atom     := NUMBER | NAME | NAME "(" args ")" | "(" expr ")"

``#`` starts a comment that runs to the end of the line.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

FUNCTIONS = {"abs": (1, 1), "exp": (1, 1), "tanh": (1, 1), "min": (2, 8), "max": (2, 8), "clamp": (3, 3)}
COMPARISONS = ("<=", ">=", "==", "!=", "<", ">")
KEYWORDS = ("term", "stage")


class ProgramError(ValueError):
    pass


class RewardSyntaxError(ProgramError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class UnknownFeatureError(ProgramError):
    def __init__(self, name: str, term: str | None = None):
        where = f" in term {term!r}" if term else ""
        super().__init__(f"unknown feature {name!r}{where}")
        self.name = name


class DuplicateTermError(ProgramError):
    pass


class NegativeWeightError(ProgramError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value >= 0):
            raise ValueError("numeric literals are finite and non-negative; use Neg for negatives")


@dataclass(frozen=True)
class Feature:
    name: str
    arg: int | None = None


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


def const(x: float):
    """Literal node for any finite float."""
    return Neg(Num(-x)) if x < 0 else Num(float(x))


def walk(node):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.operand)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


def features_used(node) -> set[str]:
    return {n.name for n in walk(node) if isinstance(n, Feature)}


# -- lexer -------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|!=|[-+*/<>(){},@])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise RewardSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# -- parser ------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedTerm:
    name: str
    expr: object
    weight: float
    line: int


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise RewardSyntaxError(message, tok.line, tok.col)

    def take(self, text: str | None = None, kind: str | None = None) -> Token:
        tok = self.tok
        if (text is not None and tok.text != text) or (kind is not None and tok.kind != kind):
            want = repr(text) if text is not None else kind
            got = repr(tok.text) if tok.kind != "eof" else "end of input"
            self.fail(f"expected {want}, got {got}")
        self.i += 1
        return tok

    def program(self) -> tuple[int, list[ParsedTerm]]:
        stage = 0
        if self.tok.text == "stage":
            self.take("stage")
            tok = self.take(kind="num")
            if not tok.text.isdigit():
                self.fail("stage index must be a non-negative integer", tok)
            stage = int(tok.text)
        terms = []
        while self.tok.kind != "eof":
            terms.append(self.term())
        return stage, terms

    def term(self) -> ParsedTerm:
        start = self.take("term")
        name = self.take(kind="name")
        if name.text in KEYWORDS:
            self.fail(f"{name.text!r} is reserved", name)
        self.take("{")
        expr = self.expr()
        self.take("}")
        self.take("@")
        if self.tok.text == "-":
            raise NegativeWeightError(f"line {self.tok.line}: term {name.text!r} has a negative weight")
        weight = float(self.take(kind="num").text)
        if not math.isfinite(weight):
            self.fail("weight must be finite")
        return ParsedTerm(name.text, expr, weight, start.line)

    def expr(self):
        left = self.sum()
        if self.tok.text in COMPARISONS:
            op = self.take().text
            right = self.sum()
            if self.tok.text in COMPARISONS:
                self.fail("comparisons do not chain; add parentheses")
            return BinOp(op, left, right)
        return left

    def sum(self):
        node = self.product()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            node = BinOp(op, node, self.product())
        return node

    def product(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.text == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.take()
            value = float(tok.text)
            if not math.isfinite(value):
                self.fail("numeric literal overflows", tok)
            return Num(value)
        if tok.text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if tok.kind == "name":
            if tok.text in KEYWORDS:
                self.fail(f"unexpected keyword {tok.text!r}", tok)
            self.take()
            if self.tok.text != "(":
                return Feature(tok.text)
            self.take("(")
            if tok.text in FUNCTIONS:
                args = [self.expr()]
                while self.tok.text == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                lo, hi = FUNCTIONS[tok.text]
                if not lo <= len(args) <= hi:
                    self.fail(f"{tok.text}() takes {lo}..{hi} arguments, got {len(args)}", tok)
                return Call(tok.text, tuple(args))
            if self.tok.kind != "num":
                self.fail(f"unknown function {tok.text!r}", tok)
            idx = self.take(kind="num")
            if not idx.text.isdigit():
                self.fail("feature index must be a non-negative integer", idx)
            self.take(")")
            return Feature(tok.text, int(idx.text))
        self.fail(f"unexpected {tok.text!r}" if tok.kind != "eof" else "unexpected end of input")


def parse_terms(text: str) -> tuple[int, list[ParsedTerm]]:
    return Parser(text).program()


def parse_expr(text: str):
    p = Parser(text)
    node = p.expr()
    p.take(kind="eof")
    return node


# -- printer -----------------------------------------------------------------

_PREC = {"<": 1, "<=": 1, ">": 1, ">=": 1, "==": 1, "!=": 1, "+": 2, "-": 2, "*": 3, "/": 3}


def format_number(x: float) -> str:
    return repr(float(x))


def to_text(node, parent: int = 0, right: bool = False) -> str:
    if isinstance(node, Num):
        return format_number(node.value)
    if isinstance(node, Feature):
        return node.name if node.arg is None else f"{node.name}({node.arg})"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        return "-" + to_text(node.operand, 4)
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        text = f"{to_text(node.left, p)} {node.op} {to_text(node.right, p, True)}"
        if p < parent or (p == parent and (right or p == 1)):
            return f"({text})"
        return text
    raise TypeError(f"not an expression node: {node!r}")
