"""Decision procedure for the symbolic fragment.

Branch-and-prune over declared domains: interval propagation (forward
evaluation, backward projection) narrows integer, real and string-length
variables, disjunctions are case-split when neither side can be refuted,
and leaves are checked exactly with the tree-walking evaluator. String
contents are chosen only at leaves, once every length is fixed.
"""

from __future__ import annotations

import itertools
import logging
import math
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .lang import (
    And, Arith, Atom, Concat, Constraint, Contains, Num, Or, Str, StrLen, StrStr,
    Var, VarDecl, eval_constraint, eval_expr, free_vars, is_integral, iter_exprs,
    string_constants,
)

log = logging.getLogger(__name__)

DEFAULT_NUM_BOUND = 10 ** 6
DEFAULT_MAXLEN = 4096
INF = math.inf


class SymSolvError(Exception):
    pass


class UnsupportedConstraint(SymSolvError):
    pass


class Incomplete(SymSolvError):
    """The search budget ran out before a verdict was proven."""


@dataclass(frozen=True)
class ConflictClause:
    """Disjunction of ``name != value``; excludes one rejected assignment."""

    disjuncts: tuple[tuple[str, object], ...]

    def __post_init__(self) -> None:
        if not self.disjuncts:
            raise ValueError("a conflict clause needs at least one disjunct")
        names = [n for n, _ in self.disjuncts]
        if len(set(names)) != len(names):
            raise ValueError("conflict clause names must be distinct")

    @classmethod
    def excluding(cls, assignment: Mapping[str, object], names: Iterable[str] | None = None):
        names = sorted(assignment) if names is None else list(names)
        return cls(tuple((n, assignment[n]) for n in names))

    def satisfied_by(self, a: Mapping[str, object]) -> bool:
        return any(a[n] != v for n, v in self.disjuncts)

    def as_constraint(self) -> Constraint:
        out = None
        for n, v in self.disjuncts:
            atom = Atom("!=", Var(n), Str(v) if isinstance(v, str) else Num(float(v)))
            out = atom if out is None else Or(out, atom)
        return out


@dataclass
class Sat:
    assignment: dict[str, object]
    nodes: int = 0

    @property
    def sat(self) -> bool:
        return True


@dataclass
class Unsat:
    within_domain: bool = True
    nodes: int = 0

    @property
    def sat(self) -> bool:
        return False


SymVerdict = Sat | Unsat


# -- domains ----------------------------------------------------------------


def numeric_bounds(d: VarDecl) -> tuple[float, float]:
    if d.lo is not None:
        return float(d.lo), float(d.hi)
    return -float(DEFAULT_NUM_BOUND), float(DEFAULT_NUM_BOUND)


def string_maxlen(d: VarDecl) -> int:
    return DEFAULT_MAXLEN if d.maxlen is None else d.maxlen


def len_name(s: str) -> str:
    return f"#len:{s}"


def string_alphabet(constraints: Iterable[Constraint]) -> str:
    """Characters of the string constants plus one filler absent from them.

    The filler is always the last character.
    """
    used = sorted(set("".join(string_constants(constraints))))
    pool = string.ascii_lowercase + string.ascii_uppercase + string.digits
    filler = next((c for c in pool if c not in used), None)
    if filler is None:
        return "".join(used)
    return "".join(used) + filler


def _filler(alphabet: str) -> str:
    return alphabet[-1]


# -- checking ---------------------------------------------------------------


def check_sat(a: Mapping[str, object], constraints: Sequence[Constraint]) -> bool:
    """True iff every constraint evaluates to true under ``a``."""
    for c in constraints:
        missing = free_vars(c) - set(a)
        if missing:
            raise KeyError(f"unbound variable(s): {', '.join(sorted(missing))}")
    return all(eval_constraint(c, a) for c in constraints)


# -- interval arithmetic ----------------------------------------------------


def _mul(a: float, b: float) -> float:
    if a == 0 or b == 0:
        return 0.0
    return a * b


def i_add(x, y):
    return (x[0] + y[0], x[1] + y[1])


def i_sub(x, y):
    return (x[0] - y[1], x[1] - y[0])


def i_mul(x, y):
    ps = (_mul(x[0], y[0]), _mul(x[0], y[1]), _mul(x[1], y[0]), _mul(x[1], y[1]))
    return (min(ps), max(ps))


def i_div(x, y):
    """x / y; None when y is exactly zero, the whole line when y straddles 0."""
    if y[0] == 0 and y[1] == 0:
        return None
    if y[0] <= 0 <= y[1]:
        if y[0] == 0:
            return i_mul(x, (1 / y[1] if y[1] != INF else 0.0, INF))
        if y[1] == 0:
            return i_mul(x, (-INF, 1 / y[0] if y[0] != -INF else 0.0))
        return (-INF, INF)
    inv = (1 / y[1] if y[1] != INF else 0.0, 1 / y[0] if y[0] != -INF else 0.0)
    if y[1] < 0:
        inv = (1 / y[1] if y[1] != -INF else 0.0, 1 / y[0] if y[0] != -INF else 0.0)
        inv = (min(inv), max(inv))
    return i_mul(x, inv)


_TOP = (-INF, INF)


def _len_expr(e):
    """Numeric expression for the length of string expression ``e``."""
    if isinstance(e, Var):
        return Var(len_name(e.name))
    if isinstance(e, Str):
        return Num(float(len(e.value)))
    if isinstance(e, Concat):
        return Arith("+", _len_expr(e.left), _len_expr(e.right))
    raise TypeError(f"not a string expression: {e!r}")


@dataclass(frozen=True)
class _Opaque:
    """A strstr result: -1 or an index that leaves room for the needle."""

    hay_len: object
    needle_len: object


def _lower_num(e):
    """Rewrite strlen/strstr into forms the interval engine understands."""
    if isinstance(e, (Num, Var)):
        return e
    if isinstance(e, Arith):
        return Arith(e.op, _lower_num(e.left), _lower_num(e.right))
    if isinstance(e, StrLen):
        return _len_expr(e.arg)
    if isinstance(e, StrStr):
        return _Opaque(_len_expr(e.haystack), _len_expr(e.needle))
    raise TypeError(f"not a numeric expression: {e!r}")


# propagation tree: ("atom", cmp, l, r, integral) | ("and", [..]) | ("or", [..]) | ("true",)

def _lower_constraint(c: Constraint, kinds: Mapping[str, str]):
    if isinstance(c, And):
        return ("and", [_lower_constraint(c.left, kinds), _lower_constraint(c.right, kinds)])
    if isinstance(c, Or):
        return ("or", [_lower_constraint(c.left, kinds), _lower_constraint(c.right, kinds)])
    if isinstance(c, Contains):
        return ("atom", ">=", _len_expr(c.haystack), _len_expr(c.needle), True)
    if _is_str(c.left, kinds):
        if c.cmp == "==":
            return ("atom", "==", _len_expr(c.left), _len_expr(c.right), True)
        return ("true",)
    integral = is_integral(c.left, kinds) and is_integral(c.right, kinds)
    return ("atom", c.cmp, _lower_num(c.left), _lower_num(c.right), integral)


def _is_str(e, kinds) -> bool:
    if isinstance(e, (Str, Concat)):
        return True
    return isinstance(e, Var) and kinds.get(e.name) == "str"


class _Box(dict):
    """name -> (lo, hi); integer-valued names are kept on integral bounds."""

    def __init__(self, init, ints):
        super().__init__(init)
        self.ints = ints

    def copy(self):
        return _Box(self, self.ints)

    def narrow(self, name, lo, hi) -> bool:
        cur_lo, cur_hi = self[name]
        if name in self.ints:
            lo = math.ceil(lo - 1e-9) if lo != -INF else lo
            hi = math.floor(hi + 1e-9) if hi != INF else hi
        else:
            # outward slack keeps float round-off from excluding exact solutions
            if lo != -INF:
                lo -= 1e-12 * max(1.0, abs(lo))
            if hi != INF:
                hi += 1e-12 * max(1.0, abs(hi))
        new_lo, new_hi = max(cur_lo, lo), min(cur_hi, hi)
        if new_lo > new_hi:
            return False
        if new_lo != cur_lo or new_hi != cur_hi:
            self[name] = (new_lo, new_hi)
        return True


def _fwd(e, box):
    if isinstance(e, Num):
        return (e.value, e.value)
    if isinstance(e, Var):
        return box[e.name]
    if isinstance(e, _Opaque):
        return (-1.0, max(-1.0, _fwd(e.hay_len, box)[1] - _fwd(e.needle_len, box)[0]))
    x, y = _fwd(e.left, box), _fwd(e.right, box)
    if x is None or y is None:
        return None
    if e.op == "+":
        return i_add(x, y)
    if e.op == "-":
        return i_sub(x, y)
    if e.op == "*":
        return i_mul(x, y)
    return i_div(x, y)


def _bwd(e, target, box) -> bool:
    """Narrow ``box`` so that ``e`` can take a value inside ``target``."""
    if isinstance(e, Num):
        return target[0] <= e.value <= target[1] or _close(e.value, target)
    if isinstance(e, Var):
        return box.narrow(e.name, target[0], target[1])
    if isinstance(e, _Opaque):
        return target[1] >= -1.0
    x, y = _fwd(e.left, box), _fwd(e.right, box)
    if x is None or y is None:
        return False
    if e.op == "+":
        return _bwd(e.left, i_sub(target, y), box) and _bwd(e.right, i_sub(target, x), box)
    if e.op == "-":
        return _bwd(e.left, i_add(target, y), box) and _bwd(e.right, i_sub(x, target), box)
    if e.op == "*":
        if not (y[0] <= 0 <= y[1]):
            q = i_div(target, y)
            if not _bwd(e.left, q, box):
                return False
            x = _fwd(e.left, box)
            if x is None:
                return False
        if not (x[0] <= 0 <= x[1]):
            q = i_div(target, x)
            if not _bwd(e.right, q, box):
                return False
        return True
    # division: left = result * right, right = left / result
    if y[0] == 0 and y[1] == 0:
        return False
    if not _bwd(e.left, i_mul(target, y), box):
        return False
    x = _fwd(e.left, box)
    if x is None:
        return False
    if not (target[0] <= 0 <= target[1]):
        q = i_div(x, target)
        if q is not None and not _bwd(e.right, q, box):
            return False
    return True


def _close(v, target) -> bool:
    tol = 1e-9 * max(1.0, abs(v))
    return target[0] - tol <= v <= target[1] + tol


def _propagate(node, box) -> bool:
    tag = node[0]
    if tag == "true":
        return True
    if tag == "and":
        return all(_propagate(ch, box) for ch in node[1])
    if tag == "or":
        survivors = []
        for ch in node[1]:
            b = box.copy()
            if _propagate(ch, b):
                survivors.append(b)
        if not survivors:
            return False
        if len(survivors) == 1:
            box.update(survivors[0])
            return True
        for name in box:
            lo = min(b[name][0] for b in survivors)
            hi = max(b[name][1] for b in survivors)
            if (lo, hi) != box[name]:
                box[name] = (lo, hi)
        return True
    _, cmp, left, right, integral = node
    a, b = _fwd(left, box), _fwd(right, box)
    if a is None or b is None:
        return False
    strict = cmp in ("<", ">")
    shift = 1.0 if (strict and integral) else 0.0
    if cmp in (">", ">="):
        cmp, left, right, a, b = ("<" if cmp == ">" else "<="), right, left, b, a
    if cmp in ("<", "<="):
        if strict and a[0] >= b[1] and not integral:
            return False
        if not _bwd(left, (-INF, b[1] - shift), box):
            return False
        a = _fwd(left, box)
        return a is not None and _bwd(right, (a[0] + shift, INF), box)
    if cmp == "==":
        lo, hi = max(a[0], b[0]), min(a[1], b[1])
        if lo > hi and not _close(lo, (hi, hi)):
            return False
        lo, hi = min(lo, hi), max(lo, hi)
        return _bwd(left, (lo, hi), box) and _bwd(right, (lo, hi), box)
    # "!=": only refutable when both sides are the same point
    if a[0] == a[1] == b[0] == b[1]:
        return False
    if integral and isinstance(left, Var) and b[0] == b[1]:
        lo, hi = box[left.name]
        if lo == b[0]:
            return box.narrow(left.name, lo + 1, hi)
        if hi == b[0]:
            return box.narrow(left.name, lo, hi - 1)
    if integral and isinstance(right, Var) and a[0] == a[1]:
        lo, hi = box[right.name]
        if lo == a[0]:
            return box.narrow(right.name, lo + 1, hi)
        if hi == a[0]:
            return box.narrow(right.name, lo, hi - 1)
    return True


# -- the solver ---------------------------------------------------------------


@dataclass
class SolverConfig:
    max_nodes: int = 100_000
    real_tolerance: float = 1e-9
    max_string_candidates: int = 20_000
    propagation_rounds: int = 30


class _Search:
    def __init__(self, constraints, conflicts, decls, cfg: SolverConfig):
        self.cfg = cfg
        self.decls = {d.name: d for d in decls}
        self.kinds = {d.name: d.kind for d in decls}
        self.constraints = list(constraints) + [cc.as_constraint() for cc in conflicts]
        names = set()
        for c in self.constraints:
            names |= free_vars(c)
        undeclared = names - set(self.decls)
        if undeclared:
            raise SymSolvError(f"undeclared variable(s): {', '.join(sorted(undeclared))}")
        # every declared variable gets a value, even unconstrained ones
        self.num_vars = [d.name for d in decls if d.kind != "str"]
        self.str_vars = [d.name for d in decls if d.kind == "str"]
        init, ints = {}, set()
        for n in self.num_vars:
            lo, hi = numeric_bounds(self.decls[n])
            if self.kinds[n] == "int":
                lo, hi = math.ceil(lo), math.floor(hi)
                ints.add(n)
            init[n] = (float(lo), float(hi))
        for s in self.str_vars:
            init[len_name(s)] = (0.0, float(string_maxlen(self.decls[s])))
            ints.add(len_name(s))
        self.root = _Box(init, frozenset(ints))
        self.tree = [_lower_constraint(c, self.kinds) for c in self.constraints]
        self.alphabet = string_alphabet(self.constraints)
        self.filler = _filler(self.alphabet)
        self.nodes = 0
        self.incomplete = False
        self._hints = self._string_hints()

    # propagation to a fixpoint
    def propagate(self, box) -> bool:
        for _ in range(self.cfg.propagation_rounds):
            before = dict(box)
            for node in self.tree:
                if not _propagate(node, box):
                    return False
            if not any(self._moved(before[k], box[k]) for k in box):
                return True
        return True

    @staticmethod
    def _moved(old, new) -> bool:
        if old == new:
            return False
        width = old[1] - old[0]
        if math.isinf(width):
            return True
        return (width - (new[1] - new[0])) > 1e-3 * max(width, 1e-12)

    def run(self) -> SymVerdict:
        box = self.root.copy()
        if not self.propagate(box):
            return Unsat(nodes=1)
        stack = [box]
        while stack:
            box = stack.pop()
            self.nodes += 1
            if self.nodes > self.cfg.max_nodes:
                raise Incomplete(f"symbolic search exceeded {self.cfg.max_nodes} nodes")
            found = self.probe(box, exhaustive=False)
            if found is not None:
                return Sat(found, nodes=self.nodes)
            var = self.pick(box)
            if var is None:
                found = self.probe(box, exhaustive=True)
                if found is not None:
                    return Sat(found, nodes=self.nodes)
                continue
            children = []
            for lo, hi in self.split(var, box[var]):
                child = box.copy()
                child[var] = (lo, hi)
                if self.propagate(child):
                    children.append(child)
            stack.extend(reversed(children))
        if self.incomplete:
            raise Incomplete("string materialization was not exhaustive")
        return Unsat(nodes=self.nodes)

    def pick(self, box):
        best, best_w = None, None
        for name, (lo, hi) in box.items():
            w = hi - lo
            if name in box.ints:
                if w < 1:
                    continue
            elif w <= self.cfg.real_tolerance * max(1.0, abs(lo), abs(hi)):
                continue
            key = (name not in box.ints, w)
            if best is None or key < best_w:
                best, best_w = name, key
        return best

    def split(self, name, iv):
        lo, hi = iv
        if name in self.root.ints:
            if lo < 0 < hi:
                return [(0.0, hi), (lo, -1.0)]
            if hi <= 0:
                mid = math.ceil((lo + hi) / 2)
                return [(mid, hi), (lo, mid - 1)]
            mid = math.floor((lo + hi) / 2)
            return [(lo, mid), (mid + 1, hi)]
        if lo < 0 < hi:
            return [(0.0, hi), (lo, 0.0)]
        if math.isinf(lo) or math.isinf(hi):
            mid = 2 * hi if math.isinf(lo) else 2 * lo
            mid = mid if mid != 0 else (1.0 if math.isinf(hi) else -1.0)
        else:
            mid = lo + (hi - lo) / 2
        if hi <= 0:
            return [(mid, hi), (lo, mid)]
        return [(lo, mid), (mid, hi)]

    # candidate points
    def point(self, name, iv, short: bool = False):
        lo, hi = iv
        if name in self.root.ints:
            return int(min(max(0.0, lo), hi))
        if hi - lo > self.cfg.real_tolerance * max(1.0, abs(lo), abs(hi)):
            return float(min(max(0.0, lo), hi))
        mid = lo + (hi - lo) / 2
        if short:
            # the shortest decimal inside the interval often evaluates exactly
            for digits in range(0, 17):
                v = round(mid, digits)
                if lo <= v <= hi:
                    return float(v)
        return float(mid)

    def probe(self, box, exhaustive: bool):
        found = self._dive(box, exhaustive, short=False)
        if found is None and any(n not in box.ints for n in box):
            found = self._dive(box, exhaustive, short=True)
        return found

    def _dive(self, box, exhaustive: bool, short: bool):
        """Pin variables one at a time, re-propagating after each."""
        box = box.copy()
        # integers narrowest first; reals widest first so dependent reals are
        # pinned last, by propagation
        order = sorted(box, key=lambda n: (0, box[n][1] - box[n][0]) if n in box.ints
                       else (1, -(box[n][1] - box[n][0])))
        for name in order:
            lo, hi = box[name]
            if lo == hi:
                continue
            v = self.point(name, (lo, hi), short)
            box[name] = (v, v)
            if not self.propagate(box):
                return None
        env = {n: self.point(n, box[n], short) for n in self.num_vars}
        if not self.str_vars:
            return env if self.check(env) else None
        lengths = {s: self.point(len_name(s), box[len_name(s)]) for s in self.str_vars}
        return self.materialize(env, lengths, exhaustive=exhaustive)

    def check(self, env) -> bool:
        return all(eval_constraint(c, env) for c in self.constraints)

    # strings
    def _string_hints(self):
        """Per string variable: list of (needle, position-expression or None, exact)."""
        hints = {s: [] for s in self.str_vars}
        for c in self.constraints:
            for node in iter_exprs(c):
                if isinstance(node, Contains) and isinstance(node.haystack, Var) and isinstance(node.needle, Str):
                    hints[node.haystack.name].append((node.needle.value, None, False))
                elif isinstance(node, Atom):
                    for me, other in ((node.left, node.right), (node.right, node.left)):
                        if isinstance(me, Var) and me.name in hints and isinstance(other, Str):
                            hints[me.name].append((other.value, None, True))
                        if (isinstance(me, StrStr) and isinstance(me.haystack, Var)
                                and isinstance(me.needle, Str)):
                            hints[me.haystack.name].append((me.needle.value, other, False))
        return hints

    def _candidates(self, s, length, env):
        f = self.filler
        seen = set()

        def emit(text):
            if len(text) == length and text not in seen:
                seen.add(text)
                return [text]
            return []

        out = emit(f * length)
        placed = f * length
        for needle, pos_expr, exact in self._hints[s]:
            if exact:
                out += emit(needle)
                continue
            positions = [0]
            if pos_expr is not None:
                try:
                    v = eval_expr(pos_expr, env)
                    positions = [int(v), int(v) + 1, int(v) - 1]
                except Exception:
                    positions = [0]
            for p in positions:
                if 0 <= p and p + len(needle) <= length:
                    out += emit(f * p + needle + f * (length - p - len(needle)))
                    if placed[p:p + len(needle)] == f * len(needle):
                        placed = placed[:p] + needle + placed[p + len(needle):]
        out += emit(placed)
        for ch in self.alphabet:
            out += emit(ch * length)
        return out

    def materialize(self, env, lengths, exhaustive: bool):
        per_var = [self._candidates(s, lengths[s], env) for s in self.str_vars]
        budget = self.cfg.max_string_candidates
        for combo in itertools.islice(itertools.product(*per_var), budget):
            trial = dict(env)
            trial.update(zip(self.str_vars, combo))
            if self.check(trial):
                return trial
        if not exhaustive:
            return None
        total = 1
        for s in self.str_vars:
            total *= len(self.alphabet) ** lengths[s]
            if total > budget:
                self.incomplete = True
                return None
        pools = [["".join(t) for t in itertools.product(self.alphabet, repeat=lengths[s])]
                 for s in self.str_vars]
        for combo in itertools.product(*pools):
            trial = dict(env)
            trial.update(zip(self.str_vars, combo))
            if self.check(trial):
                return trial
        return None


def solve(
    constraints: Sequence[Constraint],
    conflicts: Sequence[ConflictClause] = (),
    decls: Sequence[VarDecl] = (),
    cfg: SolverConfig | None = None,
) -> SymVerdict:
    """Decide the conjunction of ``constraints`` minus the ``conflicts``.

    Every declared variable is bound in a SAT assignment. Raises
    ``Incomplete`` when the node budget or string enumeration runs out.
    """
    search = _Search(constraints, conflicts, decls, cfg or SolverConfig())
    verdict = search.run()
    if isinstance(verdict, Sat):
        assert check_sat(verdict.assignment, list(constraints)), "solver produced a non-model"
        assert all(cc.satisfied_by(verdict.assignment) for cc in conflicts)
    return verdict


def brute_force(
    constraints: Sequence[Constraint],
    decls: Sequence[VarDecl],
    bounds: Mapping[str, object] | None = None,
    alphabet: str | None = None,
    conflicts: Sequence[ConflictClause] = (),
    limit: int = 10 ** 7,
) -> SymVerdict:
    """Exhaustive enumeration over finite domains.

    ``bounds`` maps int names to ``(lo, hi)`` and string names to a max
    length; declared ranges are used otherwise. Reals are not enumerable.
    """
    bounds = dict(bounds or {})
    alphabet = alphabet if alphabet is not None else string_alphabet(
        list(constraints) + [cc.as_constraint() for cc in conflicts])
    pools, names, total = [], [], 1
    for d in decls:
        if d.kind == "real":
            raise SymSolvError(f"cannot enumerate real variable {d.name!r}")
        if d.kind == "int":
            lo, hi = bounds.get(d.name, (d.lo, d.hi))
            if lo is None:
                raise SymSolvError(f"no finite bounds for {d.name!r}")
            pool = range(int(math.ceil(lo)), int(math.floor(hi)) + 1)
            size = len(pool)
        else:
            maxlen = bounds.get(d.name, d.maxlen)
            if maxlen is None:
                raise SymSolvError(f"no max length for {d.name!r}")
            size = sum(len(alphabet) ** k for k in range(maxlen + 1))
            pool = _strings(alphabet, maxlen)
        total *= size
        if total > limit:
            raise SymSolvError(f"domain has more than {limit} tuples")
        pools.append(pool)
        names.append(d.name)
    checks = list(constraints) + [cc.as_constraint() for cc in conflicts]
    count = 0
    for combo in itertools.product(*pools):
        count += 1
        env = dict(zip(names, combo))
        if all(eval_constraint(c, env) for c in checks):
            return Sat(env, nodes=count)
    return Unsat(nodes=count)


def _strings(alphabet: str, maxlen: int) -> list[str]:
    out = []
    for k in range(maxlen + 1):
        out.extend("".join(t) for t in itertools.product(alphabet, repeat=k))
    return out
