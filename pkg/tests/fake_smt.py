"""Stand-in SMT solver: reads SMT-LIB on stdin, enumerates bounded Int symbols.

Only the integer fragment used by the exporter is understood. Anything else
(Real sorts, unbounded symbols, oversized grids) yields ``unknown``.
"""

from __future__ import annotations

import itertools
import re
import sys

TOKEN = re.compile(r'\s*(?:(;[^\n]*)|(\()|(\))|(\|[^|]*\|)|([^\s()]+))')


def sexps(text):
    stack = [[]]
    for m in TOKEN.finditer(text):
        comment, op, cl, quoted, atom = m.groups()
        if comment:
            continue
        if op:
            stack.append([])
        elif cl:
            done = stack.pop()
            stack[-1].append(done)
        elif quoted or atom:
            stack[-1].append(quoted or atom)
    return stack[0]


def ev(e, env):
    if isinstance(e, str):
        if e in env:
            return env[e]
        if e in ("true", "false"):
            return e == "true"
        return int(float(e)) if float(e).is_integer() else float(e)
    op, *args = e
    vals = [ev(a, env) for a in args]
    if op == "and":
        return all(vals)
    if op == "or":
        return any(vals)
    if op == "not":
        return not vals[0]
    if op == "-" and len(vals) == 1:
        return -vals[0]
    if op == "+":
        return sum(vals)
    if op == "-":
        return vals[0] - sum(vals[1:])
    if op == "*":
        out = 1
        for v in vals:
            out *= v
        return out
    if op in ("/", "div"):
        if vals[1] == 0:
            raise ZeroDivisionError
        return vals[0] / vals[1]
    if op == "to_real":
        return vals[0]
    if op == "=":
        return vals[0] == vals[1]
    if op == "distinct":
        return vals[0] != vals[1]
    if op == "<":
        return vals[0] < vals[1]
    if op == "<=":
        return vals[0] <= vals[1]
    if op == ">":
        return vals[0] > vals[1]
    if op == ">=":
        return vals[0] >= vals[1]
    raise ValueError(op)


def main() -> None:
    items = sexps(sys.stdin.read())
    names = [it[1] for it in items if it[0] == "declare-const"]
    if any(it[2] != "Int" for it in items if it[0] == "declare-const"):
        print("unknown")
        return
    asserts = [it[1] for it in items if it[0] == "assert"]
    lo = {n: None for n in names}
    hi = {n: None for n in names}
    for a in asserts:
        if a[0] in (">=", "<=") and isinstance(a[1], str) and a[1] in lo:
            try:
                v = ev(a[2], {})
            except (ValueError, KeyError):
                continue  # not a constant bound
            (lo if a[0] == ">=" else hi)[a[1]] = v
    if any(lo[n] is None or hi[n] is None for n in names):
        print("unknown")
        return
    pools = [range(lo[n], hi[n] + 1) for n in names]
    size = 1
    for p in pools:
        size *= len(p)
    if size > 2_000_000:
        print("unknown")
        return
    for combo in itertools.product(*pools):
        env = dict(zip(names, combo))
        try:
            ok = all(ev(a, env) for a in asserts)
        except ZeroDivisionError:
            ok = False
        if ok:
            body = " ".join(
                f"(define-fun {n} () Int {v if v >= 0 else f'(- {-v})'})" for n, v in env.items())
            print(f"sat\n(model {body})")
            return
    print("unsat")


if __name__ == "__main__":
    main()
