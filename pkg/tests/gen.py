"""Random well-typed constraint instances for oracle comparisons."""

from __future__ import annotations

import random

from neurosym.lang import (
    And, Arith, Atom, Concat, Contains, Num, Or, Str, StrLen, StrStr, Var, VarDecl,
)

INT_VARS = ("a", "b", "c")
STR_VARS = ("s", "t")
NEEDLES = ("x", "xy", "y", "")


def num_expr(rng: random.Random, depth: int, strings: bool):
    r = rng.random()
    if depth <= 0 or r < 0.35:
        if strings and rng.random() < 0.25:
            return StrLen(str_expr(rng, 1))
        if rng.random() < 0.6:
            return Var(rng.choice(INT_VARS))
        return Num(float(rng.randint(-4, 4)))
    if strings and r < 0.45:
        return StrStr(Var(rng.choice(STR_VARS)), Str(rng.choice(NEEDLES)))
    op = rng.choice("+-*/" if rng.random() < 0.85 else "/")
    return Arith(op, num_expr(rng, depth - 1, strings), num_expr(rng, depth - 1, strings))


def str_expr(rng: random.Random, depth: int):
    if depth > 0 and rng.random() < 0.2:
        return Concat(str_expr(rng, depth - 1), str_expr(rng, depth - 1))
    if rng.random() < 0.75:
        return Var(rng.choice(STR_VARS))
    return Str(rng.choice(NEEDLES))


def atom(rng: random.Random, strings: bool):
    if strings and rng.random() < 0.3:
        if rng.random() < 0.5:
            return Contains(str_expr(rng, 1), str_expr(rng, 0))
        return Atom(rng.choice(("==", "!=")), str_expr(rng, 1), str_expr(rng, 1))
    cmp = rng.choice(("==", "!=", ">", ">=", "<", "<="))
    return Atom(cmp, num_expr(rng, 2, strings), num_expr(rng, 2, strings))


def constraint(rng: random.Random, depth: int, strings: bool):
    if depth <= 0 or rng.random() < 0.4:
        return atom(rng, strings)
    cls = And if rng.random() < 0.5 else Or
    return cls(constraint(rng, depth - 1, strings), constraint(rng, depth - 1, strings))


def instance(seed: int, strings: bool | None = None):
    """(constraints, decls) over small finite domains."""
    rng = random.Random(seed)
    if strings is None:
        strings = rng.random() < 0.3
    n = rng.randint(1, 3)
    cs = [constraint(rng, 2, strings) for _ in range(n)]
    decls = [VarDecl(v, "int", -3, 3) for v in INT_VARS]
    if strings:
        decls += [VarDecl(s, "str", maxlen=2) for s in STR_VARS]
    return cs, decls
