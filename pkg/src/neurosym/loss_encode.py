"""Differentiable losses for symbolic constraints.

Each comparison atom becomes a piecewise-linear penalty that is zero (or
its floor, for ``!=``) exactly where the atom holds; conjunctions sum and
disjunctions take the minimum. Gradients are computed by reverse-mode
accumulation over the expression tree, with subgradient 0 at every kink.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .lang import (
    And, Arith, Atom, Concat, Constraint, Contains, Num, Or, Str, StrLen, StrStr,
    Var, VarDecl, eval_constraint, expr_type, free_vars,
)
from .nnet import MlpModel

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 0.5
NE_FLOOR = -1.0


class EncodeError(ValueError):
    pass


class GridTooLarge(ValueError):
    pass


def validate_params(alpha: float, beta: float) -> None:
    if not alpha > 0:
        raise EncodeError(f"alpha must be positive, got {alpha}")
    if not abs(beta) < 1:
        raise EncodeError(f"|beta| must be below 1, got {beta}")


def _sign(u: float) -> float:
    return 0.0 if u == 0 else math.copysign(1.0, u)


# -- expressions ----------------------------------------------------------------


def _expr_vg(e, env: Mapping[str, float]):
    """Value and sparse gradient of a numeric expression."""
    if isinstance(e, Num):
        return float(e.value), {}
    if isinstance(e, Var):
        return float(env[e.name]), {e.name: 1.0}
    if isinstance(e, Arith):
        a, ga = _expr_vg(e.left, env)
        b, gb = _expr_vg(e.right, env)
        if e.op == "+":
            return a + b, _axpy(ga, 1.0, gb, 1.0)
        if e.op == "-":
            return a - b, _axpy(ga, 1.0, gb, -1.0)
        if e.op == "*":
            return a * b, _axpy(ga, b, gb, a)
        if b == 0:
            return math.inf, {}
        return a / b, _axpy(ga, 1.0 / b, gb, -a / (b * b))
    raise EncodeError(f"cannot encode {type(e).__name__} expressions; lower strings to lengths first")


def _axpy(ga, ca, gb, cb):
    out = {k: ca * v for k, v in ga.items()}
    for k, v in gb.items():
        out[k] = out.get(k, 0.0) + cb * v
    return out


def _scale(g, c):
    return {k: c * v for k, v in g.items()}


# -- atoms ------------------------------------------------------------------------


def atom_loss(cmp: str, a: float, b: float, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA):
    """Loss of ``a cmp b`` and its partial derivatives (d/da, d/db)."""
    if not (math.isfinite(a) and math.isfinite(b)):
        return math.inf, 0.0, 0.0
    if cmp == "<":
        u = a - b + alpha
        return (u, 1.0, -1.0) if u > 0 else (0.0, 0.0, 0.0)
    if cmp == ">":
        u = b - a + alpha
        return (u, -1.0, 1.0) if u > 0 else (0.0, 0.0, 0.0)
    if cmp == "<=":
        u = a - b
        return (u, 1.0, -1.0) if u > 0 else (0.0, 0.0, 0.0)
    if cmp == ">=":
        u = b - a
        return (u, -1.0, 1.0) if u > 0 else (0.0, 0.0, 0.0)
    if cmp == "==":
        s = _sign(a - b)
        return abs(a - b), s, -s
    if cmp == "!=":
        u = a - b + beta
        v = -abs(u)
        if v > NE_FLOOR:
            s = -_sign(u)
            return v, s, -s
        return NE_FLOOR, 0.0, 0.0
    raise EncodeError(f"unknown comparison {cmp!r}")


def _constraint_vg(c, env, alpha, beta):
    if isinstance(c, And):
        la, ga = _constraint_vg(c.left, env, alpha, beta)
        lb, gb = _constraint_vg(c.right, env, alpha, beta)
        return la + lb, _axpy(ga, 1.0, gb, 1.0)
    if isinstance(c, Or):
        la, ga = _constraint_vg(c.left, env, alpha, beta)
        lb, gb = _constraint_vg(c.right, env, alpha, beta)
        # ties go to the left (lower-index) child
        return (la, ga) if la <= lb else (lb, gb)
    if isinstance(c, Atom):
        a, ga = _expr_vg(c.left, env)
        b, gb = _expr_vg(c.right, env)
        loss, da, db = atom_loss(c.cmp, a, b, alpha, beta)
        if math.isinf(loss):
            return math.inf, {}
        return loss, _axpy(ga, da, gb, db)
    raise EncodeError(f"cannot encode {type(c).__name__}; it is routed to the symbolic solver")


# -- loss functions ---------------------------------------------------------------


@dataclass(frozen=True)
class LossFunction:
    """Loss of a symbolic constraint over an ordered numeric variable vector."""

    constraint: Constraint
    vars: tuple[str, ...]
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        validate_params(self.alpha, self.beta)

    def value_and_grad(self, a: Mapping[str, float]) -> tuple[float, dict[str, float]]:
        """Loss and the sparse gradient over every variable read."""
        return _constraint_vg(self.constraint, a, self.alpha, self.beta)

    def eval(self, a: Mapping[str, float]) -> float:
        return self.value_and_grad(a)[0]

    def grad(self, a: Mapping[str, float]) -> np.ndarray:
        _, g = self.value_and_grad(a)
        return np.array([g.get(n, 0.0) for n in self.vars])


def encode(
    c: Constraint,
    decls: Sequence[VarDecl] = (),
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> LossFunction:
    """Loss function for ``c``; its variables follow declaration order."""
    kinds = {d.name: d.kind for d in decls}
    for node in _atoms(c):
        if isinstance(node, Contains):
            raise EncodeError("contains() cannot be encoded as a loss")
        if kinds and (expr_type(node.left, kinds) == "str"):
            raise EncodeError("string comparison reached the encoder; lower it to lengths first")
        for side in (node.left, node.right):
            _check_numeric(side)
    names = free_vars(c)
    order = [d.name for d in decls if d.name in names]
    order += sorted(names - set(order))
    return LossFunction(c, tuple(order), alpha, beta)


def _atoms(c):
    if isinstance(c, (And, Or)):
        yield from _atoms(c.left)
        yield from _atoms(c.right)
    else:
        yield c


def _check_numeric(e) -> None:
    if isinstance(e, (Str, StrLen, StrStr, Concat)):
        raise EncodeError("string expression reached the encoder; lower it to lengths first")
    if isinstance(e, Arith):
        _check_numeric(e.left)
        _check_numeric(e.right)


# -- string lowering ----------------------------------------------------------------


def length_var(s: str) -> str:
    return f"len_{s}"


def _len_of(e):
    if isinstance(e, Var):
        return Var(length_var(e.name))
    if isinstance(e, Str):
        return Num(float(len(e.value)))
    if isinstance(e, Concat):
        return Arith("+", _len_of(e.left), _len_of(e.right))
    raise EncodeError(f"no length for {e!r}")


def _lower_expr(e):
    if isinstance(e, StrLen):
        return _len_of(e.arg)
    if isinstance(e, Arith):
        return Arith(e.op, _lower_expr(e.left), _lower_expr(e.right))
    if isinstance(e, StrStr):
        raise _Drop()
    return e


class _Drop(Exception):
    pass


def lower_strings(c: Constraint, kinds: Mapping[str, str]) -> Constraint | None:
    """Relax string content to lengths: ``strlen(s)`` becomes ``len_s``.

    String (in)equality keeps only its length part (``==`` only); atoms over
    ``strstr``/``contains`` are dropped. The result is implied by ``c``; None
    means nothing encodable remains.
    """
    if isinstance(c, (And, Or)):
        left, right = lower_strings(c.left, kinds), lower_strings(c.right, kinds)
        if isinstance(c, Or) and (left is None or right is None):
            return None
        if left is None or right is None:
            return left if right is None else right
        return type(c)(left, right)
    if isinstance(c, Contains):
        return None
    if expr_type(c.left, kinds) == "str":
        if c.cmp == "==":
            return Atom("==", _len_of(c.left), _len_of(c.right))
        return None
    try:
        return Atom(c.cmp, _lower_expr(c.left), _lower_expr(c.right))
    except _Drop:
        return None


# -- composition with networks -------------------------------------------------------


@dataclass
class NeuralLink:
    model: MlpModel
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]


@dataclass
class ComposedLoss:
    """Symbolic loss evaluated on network outputs computed from free inputs.

    ``fixed`` binds variables held constant; ``links`` are evaluated in order,
    so a later network may consume an earlier one's outputs.
    """

    base: LossFunction
    vars: tuple[str, ...]
    links: list[NeuralLink]
    fixed: dict[str, float] = field(default_factory=dict)

    def realize(self, a: Mapping[str, float]) -> dict[str, float]:
        env = dict(self.fixed)
        env.update({n: float(a[n]) for n in self.vars})
        for link in self.links:
            x = np.array([env[n] for n in link.inputs], dtype=float)
            y = link.model.forward(x[None, :])[0]
            env.update(zip(link.outputs, (float(v) for v in y)))
        return env

    def value_and_grad(self, a: Mapping[str, float]) -> tuple[float, dict[str, float]]:
        env = dict(self.fixed)
        env.update({n: float(a[n]) for n in self.vars})
        tape = []
        for link in self.links:
            x = np.array([env[n] for n in link.inputs], dtype=float)
            y = link.model.forward(x[None, :])[0]
            env.update(zip(link.outputs, (float(v) for v in y)))
            tape.append((link, x))
        loss, g = self.base.value_and_grad(env)
        if math.isinf(loss):
            return loss, {}
        g = dict(g)
        # reverse through the networks
        for link, x in reversed(tape):
            down = np.array([g.pop(n, 0.0) for n in link.outputs])
            if not down.any():
                continue
            _, gx = link.model.value_and_input_grad(x, down)
            for n, v in zip(link.inputs, gx):
                g[n] = g.get(n, 0.0) + float(v)
        return loss, g

    def eval(self, a: Mapping[str, float]) -> float:
        return self.value_and_grad(a)[0]

    def grad(self, a: Mapping[str, float]) -> np.ndarray:
        _, g = self.value_and_grad(a)
        return np.array([g.get(n, 0.0) for n in self.vars])


# -- grid oracle ----------------------------------------------------------------------


def minimum_implies_sat_check(
    c: Constraint,
    lf: LossFunction,
    bounds: Mapping[str, tuple[int, int]],
    limit: int = 10 ** 6,
) -> bool:
    """True iff every global minimizer of ``lf`` on the integer grid satisfies ``c``.

    Vacuously true when no grid point satisfies ``c``.
    """
    names = list(lf.vars)
    for n in names:
        if n not in bounds:
            raise GridTooLarge(f"no grid bounds for {n!r}")
    axes = [range(int(bounds[n][0]), int(bounds[n][1]) + 1) for n in names]
    if math.prod(len(ax) for ax in axes) > limit:
        raise GridTooLarge(f"grid has more than {limit} points")
    best, minimizers, any_sat = math.inf, [], False
    for point in itertools.product(*axes):
        env = dict(zip(names, point))
        any_sat = any_sat or eval_constraint(c, env)
        loss = lf.eval(env)
        if loss < best:
            best, minimizers = loss, [env]
        elif loss == best:
            minimizers.append(env)
    if not any_sat:
        return True
    return all(eval_constraint(c, env) for env in minimizers)
