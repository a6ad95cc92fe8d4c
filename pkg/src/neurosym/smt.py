"""SMT-LIB v2 export, model import, and a child-process solver bridge.

Without string theory, every string variable ``s`` becomes an integer
``len_s`` with ``0 <= len_s <= maxlen``; ``strlen`` is eliminated in favour of
these length symbols, and atoms that need string contents are refused.
Imported models are turned back into assignments whose strings are
filler characters of the solved length.
"""

from __future__ import annotations

import os
import re
import shlex
import subprocess
import threading
from fractions import Fraction
from typing import Mapping, Sequence

from .lang import (
    And, Arith, Atom, Concat, Constraint, Contains, Num, Or, Str, StrLen, StrStr,
    Var, VarDecl, expr_type, is_integral,
)
from .symsolv import (
    ConflictClause, Sat, SymSolvError, SymVerdict, Unsat, check_sat, numeric_bounds,
    string_alphabet, string_maxlen,
)

ENV_SOLVER = "NEUROSYM_SMT_SOLVER"

_SIMPLE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class SmtError(SymSolvError):
    pass


class UnknownResult(SmtError):
    """The external solver answered ``unknown``."""


def smt_symbol(name: str) -> str:
    return name if _SIMPLE.match(name) else "|" + name.replace("|", "_") + "|"


def length_symbol(s: str) -> str:
    return f"len_{s}"


def _num_const(v: float, real: bool) -> str:
    if not real and float(v).is_integer():
        n = int(v)
        return str(n) if n >= 0 else f"(- {-n})"
    q = Fraction(v)
    body = f"{abs(q.numerator)}.0" if q.denominator == 1 else f"(/ {abs(q.numerator)}.0 {q.denominator}.0)"
    return body if q >= 0 else f"(- {body})"


def _str_lit(s: str) -> str:
    return '"' + s.replace('"', '""') + '"'


class _Writer:
    def __init__(self, kinds: Mapping[str, str], strings: bool):
        self.kinds = kinds
        self.strings = strings

    def is_real(self, e) -> bool:
        return not is_integral(e, self.kinds)

    def num(self, e, real: bool) -> str:
        if isinstance(e, Num):
            return _num_const(e.value, real)
        if isinstance(e, Var):
            sym = smt_symbol(e.name)
            if real and self.kinds[e.name] == "int":
                return f"(to_real {sym})"
            return sym
        if isinstance(e, Arith):
            inner = real or e.op == "/"
            return f"({e.op} {self.num(e.left, inner)} {self.num(e.right, inner)})"
        if isinstance(e, StrLen):
            out = self.length(e.arg)
        elif isinstance(e, StrStr):
            if not self.strings:
                raise SmtError("strstr needs a string logic")
            out = f"(str.indexof {self.str(e.haystack)} {self.str(e.needle)} 0)"
        else:
            raise SmtError(f"not a numeric expression: {e!r}")
        return f"(to_real {out})" if real else out

    def length(self, e) -> str:
        if self.strings:
            return f"(str.len {self.str(e)})"
        if isinstance(e, Var):
            return smt_symbol(length_symbol(e.name))
        if isinstance(e, Str):
            return str(len(e.value))
        if isinstance(e, Concat):
            return f"(+ {self.length(e.left)} {self.length(e.right)})"
        raise SmtError(f"cannot take the length of {e!r}")

    def str(self, e) -> str:
        if isinstance(e, Str):
            return _str_lit(e.value)
        if isinstance(e, Var):
            return smt_symbol(e.name)
        if isinstance(e, Concat):
            return f"(str.++ {self.str(e.left)} {self.str(e.right)})"
        raise SmtError(f"not a string expression: {e!r}")

    def constraint(self, c) -> str:
        if isinstance(c, (And, Or)):
            op = "and" if isinstance(c, And) else "or"
            return f"({op} {self.constraint(c.left)} {self.constraint(c.right)})"
        if isinstance(c, Contains):
            if not self.strings:
                raise SmtError("contains needs a string logic")
            return f"(str.contains {self.str(c.haystack)} {self.str(c.needle)})"
        if isinstance(c, Atom):
            if expr_type(c.left, self.kinds) == "str":
                if not self.strings:
                    raise SmtError("string equality needs a string logic")
                body = f"(= {self.str(c.left)} {self.str(c.right)})"
                return body if c.cmp == "==" else f"(not {body})"
            real = self.is_real(c.left) or self.is_real(c.right)
            l, r = self.num(c.left, real), self.num(c.right, real)
            if c.cmp == "!=":
                return f"(not (= {l} {r}))"
            op = "=" if c.cmp == "==" else c.cmp
            return f"({op} {l} {r})"
        raise SmtError(f"not a constraint: {c!r}")


def export_smt(
    constraints: Sequence[Constraint],
    decls: Sequence[VarDecl],
    conflicts: Sequence[ConflictClause] = (),
    strings: bool = False,
) -> str:
    """SMT-LIB v2 script ending in ``(check-sat)`` and ``(get-model)``."""
    kinds = {d.name: d.kind for d in decls}
    w = _Writer(kinds, strings)
    logic = "ALL" if strings else "QF_NIRA"
    lines = [f"(set-logic {logic})", "(set-option :produce-models true)"]
    bounds = []
    for d in decls:
        if d.kind == "str":
            maxlen = string_maxlen(d)
            if strings:
                lines.append(f"(declare-const {smt_symbol(d.name)} String)")
                bounds.append(f"(<= (str.len {smt_symbol(d.name)}) {maxlen})")
            else:
                sym = smt_symbol(length_symbol(d.name))
                lines.append(f"(declare-const {sym} Int)")
                bounds.append(f"(>= {sym} 0)")
                bounds.append(f"(<= {sym} {maxlen})")
            continue
        sort = "Int" if d.kind == "int" else "Real"
        sym = smt_symbol(d.name)
        lines.append(f"(declare-const {sym} {sort})")
        lo, hi = numeric_bounds(d)
        real = d.kind == "real"
        bounds.append(f"(>= {sym} {_num_const(lo, real)})")
        bounds.append(f"(<= {sym} {_num_const(hi, real)})")
    lines += [f"(assert {b})" for b in bounds]
    for c in list(constraints) + [cc.as_constraint() for cc in conflicts]:
        lines.append(f"(assert {w.constraint(c)})")
    lines += ["(check-sat)", "(get-model)"]
    return "\n".join(lines) + "\n"


# -- import -------------------------------------------------------------------

_SEXP_TOKEN = re.compile(r'\s*(?:(;[^\n]*)|(\()|(\))|("(?:[^"]|"")*")|(\|[^|]*\|)|([^\s()";|]+))')


def _sexps(text: str) -> list:
    stack: list[list] = [[]]
    pos = 0
    while pos < len(text):
        m = _SEXP_TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip():
                raise SmtError(f"cannot tokenize solver output near {text[pos:pos + 20]!r}")
            break
        pos = m.end()
        comment, lpar, rpar, strlit, quoted, atom = m.groups()
        if comment:
            continue
        if lpar:
            stack.append([])
        elif rpar:
            if len(stack) == 1:
                raise SmtError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        elif strlit:
            stack[-1].append(("str", strlit[1:-1].replace('""', '"')))
        elif quoted:
            stack[-1].append(quoted[1:-1])
        elif atom:
            stack[-1].append(atom)
    if len(stack) != 1:
        raise SmtError("unbalanced '(' in solver output")
    return stack[0]


def _value(v):
    if isinstance(v, tuple):
        return v[1]
    if isinstance(v, str):
        if re.fullmatch(r"-?\d+", v):
            return int(v)
        try:
            return Fraction(v)
        except ValueError:
            raise SmtError(f"unsupported model value {v!r}") from None
    if len(v) == 2 and v[0] == "-":
        return -_value(v[1])
    if len(v) == 3 and v[0] == "/":
        return Fraction(_value(v[1])) / Fraction(_value(v[2]))
    if len(v) == 2 and v[0] == "to_real":
        return _value(v[1])
    raise SmtError(f"unsupported model value {v!r}")


def parse_model(text: str) -> tuple[str, dict[str, object]]:
    """Parse solver output into (status, raw symbol values)."""
    items = _sexps(text)
    if not items or items[0] not in ("sat", "unsat", "unknown"):
        raise SmtError(f"solver output does not start with a status: {text[:80]!r}")
    status = items[0]
    values: dict[str, object] = {}
    defs = []
    for it in items[1:]:
        if isinstance(it, list):
            if it and it[0] == "model":
                defs.extend(it[1:])
            elif it and it[0] == "define-fun":
                defs.append(it)
            elif it and it[0] == "error":
                continue
            else:
                defs.extend(x for x in it if isinstance(x, list) and x and x[0] == "define-fun")
    for d in defs:
        if len(d) != 5 or d[0] != "define-fun" or d[2]:
            continue
        values[d[1]] = _value(d[4])
    return status, values


def import_model(
    text: str,
    constraints: Sequence[Constraint],
    decls: Sequence[VarDecl],
    strings: bool = False,
) -> SymVerdict:
    """Turn solver output into a verdict; SAT models are typed per ``decls``."""
    status, values = parse_model(text)
    if status == "unsat":
        return Unsat(within_domain=True)
    if status == "unknown":
        raise UnknownResult("external solver answered unknown")
    filler = string_alphabet(constraints)[-1:] or "a"
    out: dict[str, object] = {}
    for d in decls:
        if d.kind == "str":
            if strings:
                out[d.name] = values.get(d.name, "")
            else:
                out[d.name] = filler * int(values.get(length_symbol(d.name), 0))
        elif d.kind == "int":
            out[d.name] = int(values.get(d.name, 0))
        else:
            out[d.name] = float(values.get(d.name, 0))
    return Sat(out)


class SmtBridge:
    """Runs an external SMT-LIB solver; one query at a time per bridge."""

    def __init__(self, command: str | Sequence[str], timeout: float = 60.0, strings: bool = False):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise SmtError("empty solver command")
        self.timeout = timeout
        self.strings = strings
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls) -> "SmtBridge | None":
        cmd = os.environ.get(ENV_SOLVER, "").strip()
        return cls(cmd) if cmd else None

    def query(self, script: str) -> str:
        with self._lock:
            try:
                proc = subprocess.run(
                    self.argv, input=script, capture_output=True, text=True,
                    timeout=self.timeout, check=False,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise SmtError(f"external solver failed: {exc}") from None
        if not proc.stdout.strip():
            raise SmtError(f"external solver produced no output (exit {proc.returncode}): "
                           f"{proc.stderr.strip()[:200]}")
        return proc.stdout

    def solve(
        self,
        constraints: Sequence[Constraint],
        conflicts: Sequence[ConflictClause] = (),
        decls: Sequence[VarDecl] = (),
    ) -> SymVerdict:
        script = export_smt(constraints, decls, conflicts, strings=self.strings)
        verdict = import_model(self.query(script), constraints, decls, self.strings)
        if isinstance(verdict, Sat):
            checks = list(constraints) + [cc.as_constraint() for cc in conflicts]
            if not check_sat(verdict.assignment, checks):
                raise SmtError("external model fails the constraints under local semantics")
        return verdict
