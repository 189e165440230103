"""Scalar expression language for cell-update functions and predicates.

Infix syntax with arithmetic, (chainable) comparisons, ``and``/``or``/``not``,
the ternary ``cond ? a : b``, a ``null`` literal, and a few math functions.
Attribute references are bare names or scoped as ``src.name`` / ``ext.name``
when an expression is evaluated against two bound arrays.

Null semantics: arithmetic and function application propagate null;
comparisons involving null are false; the ternary takes its else-branch on a
null condition.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import ExpressionTypeError

# -- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class Ref:
    name: str
    scope: str = None  # None | "src" | "ext"


@dataclass(frozen=True)
class Unary:
    op: str  # "-" | "not"
    operand: object


@dataclass(frozen=True)
class Bin:
    op: str  # + - * / and or
    left: object
    right: object


@dataclass(frozen=True)
class Cmp:
    """Chained comparison: operands[0] ops[0] operands[1] ops[1] ..."""

    operands: tuple
    ops: tuple


@dataclass(frozen=True)
class Cond:
    cond: object
    then: object
    other: object


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


_FUNCTIONS = {
    "sqrt": lambda x: math.sqrt(x) if x >= 0 else None,
    "abs": abs,
    "min": min,
    "max": max,
    "floor": math.floor,
    "ceil": math.ceil,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+[eE][+-]?\d+|\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|==|!=|<|>|\+|-|\*|/|\(|\)|\?|:|\.|,))"
)

_CMP_OPS = {"<=", ">=", "==", "!=", "<", ">"}


def _tokenize(text: str):
    pos, tokens = 0, []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise ExpressionTypeError(f"bad token at {text[pos:]!r}")
        pos = m.end()
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ExpressionTypeError(f"expected {op!r}, got {val!r}")

    def parse(self):
        node = self.ternary()
        if self.peek()[0] != "end":
            raise ExpressionTypeError(f"trailing input at {self.peek()[1]!r}")
        return node

    def ternary(self):
        cond = self.disjunction()
        if self.peek() == ("op", "?"):
            self.next()
            then = self.ternary()
            self.expect(":")
            other = self.ternary()
            return Cond(cond, then, other)
        return cond

    def disjunction(self):
        node = self.conjunction()
        while self.peek() == ("name", "or"):
            self.next()
            node = Bin("or", node, self.conjunction())
        return node

    def conjunction(self):
        node = self.negation()
        while self.peek() == ("name", "and"):
            self.next()
            node = Bin("and", node, self.negation())
        return node

    def negation(self):
        if self.peek() == ("name", "not"):
            self.next()
            return Unary("not", self.negation())
        return self.comparison()

    def comparison(self):
        node = self.additive()
        operands, ops = [node], []
        while self.peek()[0] == "op" and self.peek()[1] in _CMP_OPS:
            ops.append(self.next()[1])
            operands.append(self.additive())
        if ops:
            return Cmp(tuple(operands), tuple(ops))
        return node

    def additive(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.next()
            return Unary("-", self.unary())
        return self.atom()

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            num = float(val)
            return Num(int(val) if re.fullmatch(r"\d+", val) else num)
        if kind == "op" and val == "(":
            node = self.ternary()
            self.expect(")")
            return node
        if kind == "name":
            if val == "null":
                return Null()
            if self.peek() == ("op", "("):
                self.next()
                args = [self.ternary()]
                while self.peek() == ("op", ","):
                    self.next()
                    args.append(self.ternary())
                self.expect(")")
                if val not in _FUNCTIONS:
                    raise ExpressionTypeError(f"unknown function {val!r}")
                return Call(val, tuple(args))
            if val in ("src", "ext") and self.peek() == ("op", "."):
                self.next()
                k, attr = self.next()
                if k != "name":
                    raise ExpressionTypeError("expected attribute after '.'")
                return Ref(attr, scope=val)
            return Ref(val)
        raise ExpressionTypeError(f"unexpected token {val!r}")


def parse(text: str):
    """Parse expression text into an AST."""
    return _Parser(_tokenize(text)).parse()


# -- evaluation ------------------------------------------------------------


def evaluate(node, src: dict, ext: dict = None):
    """Evaluate against bound scopes; bare names try src first, then ext."""
    ext = ext or {}
    return _eval(node, src, ext)


def _eval(node, src, ext):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Null):
        return None
    if isinstance(node, Ref):
        if node.scope == "src":
            return src[node.name]
        if node.scope == "ext":
            return ext[node.name]
        if node.name in src:
            return src[node.name]
        return ext[node.name]
    if isinstance(node, Unary):
        v = _eval(node.operand, src, ext)
        if node.op == "not":
            return not bool(v)
        return None if v is None else -v
    if isinstance(node, Bin):
        if node.op == "and":
            return bool(_eval(node.left, src, ext)) and bool(
                _eval(node.right, src, ext)
            )
        if node.op == "or":
            return bool(_eval(node.left, src, ext)) or bool(
                _eval(node.right, src, ext)
            )
        l = _eval(node.left, src, ext)
        r = _eval(node.right, src, ext)
        if l is None or r is None:
            return None
        if node.op == "+":
            return l + r
        if node.op == "-":
            return l - r
        if node.op == "*":
            return l * r
        if node.op == "/":
            return l / r if r != 0 else None
        raise AssertionError(node.op)
    if isinstance(node, Cmp):
        vals = [_eval(op, src, ext) for op in node.operands]
        for a, op, b in zip(vals, node.ops, vals[1:]):
            if a is None or b is None:
                return False
            ok = {
                "<": a < b,
                "<=": a <= b,
                ">": a > b,
                ">=": a >= b,
                "==": a == b,
                "!=": a != b,
            }[op]
            if not ok:
                return False
        return True
    if isinstance(node, Cond):
        c = _eval(node.cond, src, ext)
        branch = node.then if (c is not None and bool(c)) else node.other
        return _eval(branch, src, ext)
    if isinstance(node, Call):
        args = [_eval(a, src, ext) for a in node.args]
        if any(a is None for a in args):
            return None
        return _FUNCTIONS[node.fn](*args)
    raise AssertionError(f"unknown node {node!r}")


# -- static checks ---------------------------------------------------------


def type_check(node, src_names, ext_names=()):
    """Verify every reference resolves to exactly one bound name."""
    src_names, ext_names = set(src_names), set(ext_names)
    for ref in _refs(node):
        if ref.scope == "src":
            if ref.name not in src_names:
                raise ExpressionTypeError(f"unknown source attribute {ref.name!r}")
        elif ref.scope == "ext":
            if ref.name not in ext_names:
                raise ExpressionTypeError(f"unknown extrusion attribute {ref.name!r}")
        else:
            in_src = ref.name in src_names
            in_ext = ref.name in ext_names
            if not in_src and not in_ext:
                raise ExpressionTypeError(f"unknown name {ref.name!r}")
            if in_src and in_ext:
                raise ExpressionTypeError(
                    f"ambiguous name {ref.name!r}; qualify with src./ext."
                )


def _refs(node):
    if isinstance(node, Ref):
        yield node
    elif isinstance(node, Unary):
        yield from _refs(node.operand)
    elif isinstance(node, Bin):
        yield from _refs(node.left)
        yield from _refs(node.right)
    elif isinstance(node, Cmp):
        for op in node.operands:
            yield from _refs(op)
    elif isinstance(node, Cond):
        yield from _refs(node.cond)
        yield from _refs(node.then)
        yield from _refs(node.other)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _refs(a)


# -- pretty printer --------------------------------------------------------

_PREC = {
    "?": 0,
    "or": 1,
    "and": 2,
    "not": 3,
    "cmp": 4,
    "+": 5,
    "-": 5,
    "*": 6,
    "/": 6,
    "neg": 7,
    "atom": 8,
}


def pretty(node) -> str:
    """Render an AST back to parseable text (round-trips through parse)."""
    return _pp(node)[0]


def _paren(child, level):
    text, prec = _pp(child)
    return f"({text})" if prec < level else text


def _pp(node):
    if isinstance(node, Num):
        v = node.value
        return (str(v), _PREC["atom"])
    if isinstance(node, Null):
        return ("null", _PREC["atom"])
    if isinstance(node, Ref):
        if node.scope:
            return (f"{node.scope}.{node.name}", _PREC["atom"])
        return (node.name, _PREC["atom"])
    if isinstance(node, Unary):
        if node.op == "not":
            return (f"not {_paren(node.operand, _PREC['not'])}", _PREC["not"])
        return (f"-{_paren(node.operand, _PREC['neg'])}", _PREC["neg"])
    if isinstance(node, Bin):
        lvl = _PREC[node.op]
        left = _paren(node.left, lvl)
        right = _paren(node.right, lvl + 1)
        return (f"{left} {node.op} {right}", lvl)
    if isinstance(node, Cmp):
        parts = [_paren(node.operands[0], _PREC["cmp"] + 1)]
        for op, operand in zip(node.ops, node.operands[1:]):
            parts.append(op)
            parts.append(_paren(operand, _PREC["cmp"] + 1))
        return (" ".join(parts), _PREC["cmp"])
    if isinstance(node, Cond):
        c = _paren(node.cond, _PREC["?"] + 1)
        t = _paren(node.then, _PREC["?"] + 1)
        o = _paren(node.other, _PREC["?"])
        return (f"{c} ? {t} : {o}", _PREC["?"])
    if isinstance(node, Call):
        args = ", ".join(_pp(a)[0] for a in node.args)
        return (f"{node.fn}({args})", _PREC["atom"])
    raise AssertionError(node)
