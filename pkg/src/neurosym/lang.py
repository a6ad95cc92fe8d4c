"""Constraint language: AST, parser, printer and evaluator.

Concrete syntax, one statement per ``;``::

    int ptr in 0..300;
    str uri maxlen 128;
    assert ptr > 99 && (a < b || c >= d);
    neural "model.nsx" (uri_len, ver_len) -> (ptr);

``#`` starts a comment. Asserts form an implicit conjunction.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

NUMERIC_KINDS = ("int", "real")
KINDS = ("int", "real", "str")
CMP_OPS = ("==", "!=", ">", ">=", "<", "<=")
ARITH_OPS = ("+", "-", "*", "/")


class LangError(Exception):
    """Base class for parse and type errors; carries a source position."""

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.msg, self.line, self.col = msg, line, col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + msg)


class ParseError(LangError):
    pass


class ConstraintTypeError(LangError):
    pass


class UndeclaredVariable(LangError):
    pass


class EvalError(ArithmeticError):
    pass


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Arith:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class StrLen:
    arg: "Expr"


@dataclass(frozen=True)
class StrStr:
    haystack: "Expr"
    needle: "Expr"


@dataclass(frozen=True)
class Concat:
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Str, Var, Arith, StrLen, StrStr, Concat]


@dataclass(frozen=True)
class Atom:
    cmp: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Contains:
    haystack: Expr
    needle: Expr


@dataclass(frozen=True)
class And:
    left: "Constraint"
    right: "Constraint"


@dataclass(frozen=True)
class Or:
    left: "Constraint"
    right: "Constraint"


Constraint = Union[Atom, Contains, And, Or]


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    maxlen: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "str" and (self.lo is not None or self.hi is not None):
            raise ValueError("string variables take maxlen, not a range")
        if self.kind != "str" and self.maxlen is not None:
            raise ValueError("numeric variables take a range, not maxlen")
        if (self.lo is None) != (self.hi is None):
            raise ValueError("a range needs both bounds")
        if self.lo is not None and self.lo > self.hi:
            raise ValueError(f"empty range {self.lo}..{self.hi} for {self.name}")
        if self.maxlen is not None and self.maxlen < 0:
            raise ValueError("maxlen must be non-negative")


@dataclass(frozen=True)
class NeuralDecl:
    model_path: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))


@dataclass(frozen=True)
class ConstraintFile:
    decls: tuple[VarDecl, ...] = ()
    symbolic: tuple[Constraint, ...] = ()
    neural: tuple[NeuralDecl, ...] = field(default=())

    def __post_init__(self) -> None:
        for name in ("decls", "symbolic", "neural"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def decl_map(self) -> dict[str, VarDecl]:
        return {d.name: d for d in self.decls}


# -- helpers ----------------------------------------------------------------


def conj(items) -> Constraint | None:
    """Left-nested conjunction of ``items`` (None when empty)."""
    out = None
    for c in items:
        out = c if out is None else And(out, c)
    return out


def conjuncts(c: Constraint) -> list[Constraint]:
    if isinstance(c, And):
        return conjuncts(c.left) + conjuncts(c.right)
    return [c]


def iter_exprs(node) -> Iterator:
    """Pre-order walk over every constraint and expression node."""
    yield node
    if isinstance(node, (And, Or, Arith, Concat)):
        yield from iter_exprs(node.left)
        yield from iter_exprs(node.right)
    elif isinstance(node, Atom):
        yield from iter_exprs(node.left)
        yield from iter_exprs(node.right)
    elif isinstance(node, (Contains, StrStr)):
        yield from iter_exprs(node.haystack)
        yield from iter_exprs(node.needle)
    elif isinstance(node, StrLen):
        yield from iter_exprs(node.arg)


def free_vars(c) -> set[str]:
    return {n.name for n in iter_exprs(c) if isinstance(n, Var)}


def string_constants(nodes) -> set[str]:
    out: set[str] = set()
    for c in nodes:
        out |= {n.value for n in iter_exprs(c) if isinstance(n, Str)}
    return out


_DUAL = {"==": "!=", "!=": "==", ">": "<=", ">=": "<", "<": ">=", "<=": ">"}


def negate(c: Constraint) -> Constraint:
    """Negation by comparison dualization and De Morgan."""
    if isinstance(c, Atom):
        return Atom(_DUAL[c.cmp], c.left, c.right)
    if isinstance(c, And):
        return Or(negate(c.left), negate(c.right))
    if isinstance(c, Or):
        return And(negate(c.left), negate(c.right))
    raise ValueError("contains() has no dual comparison and cannot be negated")


# -- typing -----------------------------------------------------------------


def expr_type(e: Expr, kinds: Mapping[str, str]) -> str:
    """'num' or 'str'; raises ConstraintTypeError / UndeclaredVariable."""
    if isinstance(e, Num):
        return "num"
    if isinstance(e, Str):
        return "str"
    if isinstance(e, Var):
        if e.name not in kinds:
            raise UndeclaredVariable(f"undeclared variable {e.name!r}")
        return "str" if kinds[e.name] == "str" else "num"
    if isinstance(e, Arith):
        _expect(e.left, "num", kinds, f"operand of {e.op}")
        _expect(e.right, "num", kinds, f"operand of {e.op}")
        return "num"
    if isinstance(e, StrLen):
        _expect(e.arg, "str", kinds, "argument of strlen")
        return "num"
    if isinstance(e, StrStr):
        _expect(e.haystack, "str", kinds, "argument of strstr")
        _expect(e.needle, "str", kinds, "argument of strstr")
        return "num"
    if isinstance(e, Concat):
        _expect(e.left, "str", kinds, "operand of concat")
        _expect(e.right, "str", kinds, "operand of concat")
        return "str"
    raise TypeError(f"not an expression: {e!r}")


def _expect(e: Expr, want: str, kinds, what: str) -> None:
    got = expr_type(e, kinds)
    if got != want:
        raise ConstraintTypeError(f"{what} must be {'numeric' if want == 'num' else 'a string'}")


def check_constraint(c: Constraint, kinds: Mapping[str, str]) -> None:
    if isinstance(c, (And, Or)):
        check_constraint(c.left, kinds)
        check_constraint(c.right, kinds)
    elif isinstance(c, Contains):
        _expect(c.haystack, "str", kinds, "argument of contains")
        _expect(c.needle, "str", kinds, "argument of contains")
    elif isinstance(c, Atom):
        if c.cmp not in CMP_OPS:
            raise ConstraintTypeError(f"unknown comparison {c.cmp!r}")
        lt, rt = expr_type(c.left, kinds), expr_type(c.right, kinds)
        if lt != rt:
            raise ConstraintTypeError(f"cannot compare {lt} with {rt}")
        if lt == "str" and c.cmp not in ("==", "!="):
            raise ConstraintTypeError(f"strings only support == and !=, not {c.cmp}")
    else:
        raise TypeError(f"not a constraint: {c!r}")


def is_integral(e: Expr, kinds: Mapping[str, str]) -> bool:
    """True when ``e`` always evaluates to an integer."""
    if isinstance(e, Num):
        return float(e.value).is_integer()
    if isinstance(e, Var):
        return kinds.get(e.name) == "int"
    if isinstance(e, Arith):
        return e.op != "/" and is_integral(e.left, kinds) and is_integral(e.right, kinds)
    return isinstance(e, (StrLen, StrStr))


def validate_file(cf: ConstraintFile) -> None:
    kinds: dict[str, str] = {}
    for d in cf.decls:
        if d.name in kinds:
            raise ConstraintTypeError(f"variable {d.name!r} declared twice")
        kinds[d.name] = d.kind
    for c in cf.symbolic:
        check_constraint(c, kinds)
    for n in cf.neural:
        if not n.inputs or not n.outputs:
            raise ConstraintTypeError("neural constraint needs inputs and outputs")
        if set(n.inputs) & set(n.outputs):
            raise ConstraintTypeError("neural inputs and outputs overlap")
        for name in (*n.inputs, *n.outputs):
            if name not in kinds:
                raise UndeclaredVariable(f"undeclared variable {name!r}")
            if kinds[name] == "str":
                raise ConstraintTypeError(f"neural variable {name!r} must be numeric")


# -- evaluation -------------------------------------------------------------


def eval_expr(e: Expr, env: Mapping[str, object]):
    if isinstance(e, Num):
        v = e.value
        return int(v) if float(v).is_integer() and abs(v) < 2 ** 53 else v
    if isinstance(e, Str):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise KeyError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Arith):
        a, b = eval_expr(e.left, env), eval_expr(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0:
            raise EvalError("division by zero")
        return a / b
    if isinstance(e, StrLen):
        return len(eval_expr(e.arg, env))
    if isinstance(e, StrStr):
        return eval_expr(e.haystack, env).find(eval_expr(e.needle, env))
    if isinstance(e, Concat):
        return eval_expr(e.left, env) + eval_expr(e.right, env)
    raise TypeError(f"not an expression: {e!r}")


def compare(op: str, a, b) -> bool:
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "<":
        return a < b
    return a <= b


def eval_constraint(c: Constraint, env: Mapping[str, object]) -> bool:
    """Big-step evaluation; division by zero makes the enclosing atom false."""
    if isinstance(c, And):
        return eval_constraint(c.left, env) and eval_constraint(c.right, env)
    if isinstance(c, Or):
        return eval_constraint(c.left, env) or eval_constraint(c.right, env)
    try:
        if isinstance(c, Contains):
            return eval_expr(c.needle, env) in eval_expr(c.haystack, env)
        a, b = eval_expr(c.left, env), eval_expr(c.right, env)
    except EvalError:
        return False
    if isinstance(a, float) and not math.isfinite(a) or isinstance(b, float) and not math.isfinite(b):
        return False
    return compare(c.cmp, a, b)


# -- printing ---------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def fmt_num(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v)) if v != 0 or math.copysign(1, v) > 0 else "-0.0"
    return repr(v)


def fmt_str(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 32 or ord(ch) == 127:
            out.append(f"\\x{ord(ch):02x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def print_expr(e: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(e, Num):
        s = fmt_num(e.value)
        return f"({s})" if s.startswith("-") and parent_prec else s
    if isinstance(e, Str):
        return fmt_str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, StrLen):
        return f"strlen({print_expr(e.arg)})"
    if isinstance(e, StrStr):
        return f"strstr({print_expr(e.haystack)}, {print_expr(e.needle)})"
    if isinstance(e, Concat):
        return f"concat({print_expr(e.left)}, {print_expr(e.right)})"
    if isinstance(e, Arith):
        p = _PREC[e.op]
        s = f"{print_expr(e.left, p)} {e.op} {print_expr(e.right, p, True)}"
        if p < parent_prec or (p == parent_prec and right_side):
            return f"({s})"
        return s
    raise TypeError(f"not an expression: {e!r}")


def print_constraint(c: Constraint, parent: int = 0, right_side: bool = False) -> str:
    if isinstance(c, Atom):
        return f"{print_expr(c.left)} {c.cmp} {print_expr(c.right)}"
    if isinstance(c, Contains):
        return f"contains({print_expr(c.haystack)}, {print_expr(c.needle)})"
    prec, op = (1, "||") if isinstance(c, Or) else (2, "&&")
    s = f"{print_constraint(c.left, prec)} {op} {print_constraint(c.right, prec, True)}"
    if prec < parent or (prec == parent and right_side):
        return f"({s})"
    return s


def print_decl(d: VarDecl) -> str:
    s = f"{d.kind} {d.name}"
    if d.lo is not None:
        s += f" in {fmt_num(d.lo)}..{fmt_num(d.hi)}"
    if d.maxlen is not None:
        s += f" maxlen {d.maxlen}"
    return s + ";"


def print_file(cf: ConstraintFile) -> str:
    lines = [print_decl(d) for d in cf.decls]
    lines += [f"assert {print_constraint(c)};" for c in cf.symbolic]
    for n in cf.neural:
        lines.append(
            f"neural {fmt_str(n.model_path)} ({', '.join(n.inputs)}) -> ({', '.join(n.outputs)});"
        )
    return "\n".join(lines) + ("\n" if lines else "")


# -- parsing ----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<num>(?:\d+\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\.\.|->|&&|\|\||==|!=|>=|<=|[<>+\-*/(),;])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}
_KEYWORDS = {"int", "real", "str", "assert", "neural", "in", "maxlen",
             "strlen", "strstr", "contains", "concat"}


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def _unescape(body: str, line: int, col: int) -> str:
    out, i = [], 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = body[i + 1]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt == "x" and re.fullmatch(r"[0-9a-fA-F]{2}", body[i + 2:i + 4]):
            out.append(chr(int(body[i + 2:i + 4], 16)))
            i += 4
        else:
            raise ParseError(f"bad escape \\{nxt}", line, col + i + 1)
    return "".join(out)


def tokenize(text: str) -> list[Token]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok_text = m.group()
        col = pos - line_start + 1
        if kind != "ws":
            toks.append(Token(kind, tok_text, line, col))
        nl = tok_text.count("\n")
        if nl:
            line += nl
            line_start = pos + tok_text.rfind("\n") + 1
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.kinds: dict[str, str] = {}
        self.neural_toks: list[Token] = []

    # token plumbing
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None, cls=ParseError):
        tok = tok or self.tok
        return cls(msg, tok.line, tok.col)

    def accept(self, text: str) -> Token | None:
        if self.tok.text == text and self.tok.kind != "str":
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        t = self.accept(text)
        if t is None:
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise self.error(f"expected {text!r}, found {found}")
        return t

    def name(self) -> Token:
        t = self.tok
        if t.kind != "name" or t.text in _KEYWORDS:
            raise self.error(f"expected a name, found {t.text!r}" if t.kind != "eof"
                             else "expected a name, found end of input")
        self.i += 1
        return t

    def number(self) -> float:
        neg = self.accept("-") is not None
        t = self.tok
        if t.kind != "num":
            raise self.error("expected a number")
        self.i += 1
        v = float(t.text)
        return -v if neg else v

    # file level
    def parse_file(self) -> ConstraintFile:
        decls, sym, neu = [], [], []
        while self.tok.kind != "eof":
            t = self.tok
            if t.text in ("int", "real", "str") and t.kind == "name":
                decls.append(self.decl())
            elif t.text == "assert" and t.kind == "name":
                self.i += 1
                c = self.constraint()
                self.expect(";")
                sym.append(c)
            elif t.text == "neural" and t.kind == "name":
                neu.append(self.neural())
            else:
                raise self.error(f"expected a declaration, assert or neural statement, found {t.text!r}")
        cf = ConstraintFile(tuple(decls), tuple(sym), tuple(neu))
        for n, t in zip(cf.neural, self.neural_toks):
            for name in (*n.inputs, *n.outputs):
                if name not in self.kinds:
                    raise self.error(f"undeclared variable {name!r}", t, UndeclaredVariable)
                if self.kinds[name] == "str":
                    raise self.error(f"neural variable {name!r} must be numeric", t, ConstraintTypeError)
            if set(n.inputs) & set(n.outputs):
                raise self.error("neural inputs and outputs overlap", t, ConstraintTypeError)
        return cf

    def decl(self) -> VarDecl:
        kind = self.tok.text
        self.i += 1
        nt = self.name()
        if nt.text in self.kinds:
            raise self.error(f"variable {nt.text!r} declared twice", nt, ConstraintTypeError)
        lo = hi = maxlen = None
        if kind != "str" and self.accept("in"):
            lo = self.number()
            self.expect("..")
            hi = self.number()
            if lo > hi:
                raise self.error(f"empty range for {nt.text!r}", nt, ConstraintTypeError)
        elif kind == "str" and self.accept("maxlen"):
            t = self.tok
            v = self.number()
            if v < 0 or not v.is_integer():
                raise self.error("maxlen must be a non-negative integer", t)
            maxlen = int(v)
        self.expect(";")
        self.kinds[nt.text] = kind
        return VarDecl(nt.text, kind, lo, hi, maxlen)

    def neural(self) -> NeuralDecl:
        start = self.expect("neural")
        if self.tok.kind != "str":
            raise self.error("expected a quoted model path")
        path = _unescape(self.tok.text[1:-1], self.tok.line, self.tok.col)
        self.i += 1
        ins = self.name_list()
        self.expect("->")
        outs = self.name_list()
        self.expect(";")
        self.neural_toks.append(start)
        return NeuralDecl(path, tuple(ins), tuple(outs))

    def name_list(self) -> list[str]:
        self.expect("(")
        names = [self.name().text]
        while self.accept(","):
            names.append(self.name().text)
        self.expect(")")
        return names

    # constraints
    def constraint(self) -> Constraint:
        c = self.conjunction()
        while self.accept("||"):
            c = Or(c, self.conjunction())
        return c

    def conjunction(self) -> Constraint:
        c = self.cprimary()
        while self.accept("&&"):
            c = And(c, self.cprimary())
        return c

    def cprimary(self) -> Constraint:
        start_tok = self.tok
        if start_tok.text == "contains" and start_tok.kind == "name":
            self.i += 1
            self.expect("(")
            h = self.expr()
            self.expect(",")
            n = self.expr()
            self.expect(")")
            c = Contains(h, n)
            self.typecheck(c, start_tok)
            return c
        if start_tok.text == "(":
            save = self.i
            try:
                return self.atom()
            except ParseError:
                self.i = save
            self.expect("(")
            c = self.constraint()
            self.expect(")")
            return c
        return self.atom()

    def atom(self) -> Constraint:
        start_tok = self.tok
        left = self.expr()
        t = self.tok
        if t.kind != "op" or t.text not in CMP_OPS:
            found = "end of input" if t.kind == "eof" else repr(t.text)
            raise self.error(f"expected a comparison operator, found {found}")
        self.i += 1
        right = self.expr()
        c = Atom(t.text, left, right)
        self.typecheck(c, start_tok)
        return c

    def typecheck(self, c: Constraint, tok: Token) -> None:
        try:
            check_constraint(c, self.kinds)
        except LangError as exc:
            raise type(exc)(exc.msg, tok.line, tok.col) from None

    # expressions
    def expr(self) -> Expr:
        e = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            e = Arith(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            e = Arith(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.tok.text == "-" and self.tok.kind == "op":
            self.i += 1
            if self.tok.kind == "num":
                v = float(self.tok.text)
                self.i += 1
                return Num(-v)
            inner = self.unary()
            return Arith("-", Num(0.0), inner)
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "str":
            self.i += 1
            return Str(_unescape(t.text[1:-1], t.line, t.col))
        if t.text == "(":
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name" and t.text in ("strlen", "strstr", "concat"):
            self.i += 1
            self.expect("(")
            a = self.expr()
            if t.text == "strlen":
                self.expect(")")
                e = StrLen(a)
            else:
                self.expect(",")
                b = self.expr()
                self.expect(")")
                e = StrStr(a, b) if t.text == "strstr" else Concat(a, b)
            try:
                expr_type(e, self.kinds)
            except LangError as exc:
                raise type(exc)(exc.msg, t.line, t.col) from None
            return e
        if t.kind == "name" and t.text not in _KEYWORDS:
            self.i += 1
            if t.text not in self.kinds:
                raise self.error(f"undeclared variable {t.text!r}", t, UndeclaredVariable)
            return Var(t.text)
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise self.error(f"expected an expression, found {found}")


def parse(text: str) -> ConstraintFile:
    return _Parser(text).parse_file()


def parse_constraint(text: str, kinds: Mapping[str, str]) -> Constraint:
    """Parse a single constraint against known variable kinds."""
    p = _Parser(text)
    p.kinds = dict(kinds)
    c = p.constraint()
    if p.tok.kind != "eof":
        raise p.error(f"trailing input {p.tok.text!r}")
    return c
