"""Black-box target programs with per-iteration observations."""

from __future__ import annotations

import os
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Mapping

from ..lang import And, Atom, Contains, Or, VarDecl, eval_constraint, negate, parse_constraint

State = dict[str, int]


class ProgramError(RuntimeError):
    pass


def guard_type(negated) -> str:
    """Class of a negated guard: T1 (<=,>=), T2 (<,>), T3 (==,!=), T4 (and/or)."""
    if isinstance(negated, (And, Or)):
        return "T4"
    if isinstance(negated, Contains):
        raise ValueError("contains() is not a loop guard")
    if negated.cmp in ("<=", ">="):
        return "T1"
    if negated.cmp in ("<", ">"):
        return "T2"
    return "T3"


@dataclass
class TargetProgram:
    """A loop ``init; while (guard) body`` observed once per iteration.

    ``inputs`` carry sampling domains. The guard is a constraint over inputs
    and state variables, evaluated with the constraint-language semantics.
    """

    name: str
    inputs: tuple[VarDecl, ...]
    state: tuple[str, ...]
    init: Callable[[Mapping[str, int]], State]
    body: Callable[[Mapping[str, int], State], State]
    guard: str
    step_limit: int = 256
    state_kinds: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        if not self.state_kinds:
            self.state_kinds = ("int",) * len(self.state)
        kinds = self.kinds()
        self.guard_ast = parse_constraint(self.guard, kinds)

    def kinds(self) -> dict[str, str]:
        out = {d.name: d.kind for d in self.inputs}
        out.update(zip(self.state, self.state_kinds))
        return out

    @property
    def negated_guard(self):
        return negate(self.guard_ast)

    @property
    def guard_type(self) -> str:
        return guard_type(self.negated_guard)

    def run(self, inputs: Mapping[str, int]) -> list[tuple[int, State]]:
        """Rows ``(cnt, state)`` from cnt 0 until the guard fails or the limit."""
        state = dict(self.init(inputs))
        rows = [(0, state)]
        cnt = 0
        while cnt < self.step_limit and eval_constraint(self.guard_ast, {**inputs, **state}):
            state = dict(self.body(inputs, state))
            cnt += 1
            rows.append((cnt, state))
        return rows


_OBS = re.compile(r"^OBS\s+(.*)$")
_PAIR = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=(\S+)")


def parse_observations(text: str) -> list[tuple[int, dict[str, float]]]:
    """Rows from ``OBS cnt=<int> name=value ...`` lines; other lines are ignored."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _OBS.match(line.strip())
        if not m:
            continue
        pairs = dict(_PAIR.findall(m.group(1)))
        if "cnt" not in pairs:
            raise ProgramError(f"line {lineno}: observation without cnt")
        try:
            cnt = int(pairs.pop("cnt"))
            values = {k: float(v) for k, v in pairs.items()}
        except ValueError as exc:
            raise ProgramError(f"line {lineno}: {exc}") from None
        rows.append((cnt, values))
    return rows


@dataclass
class ExternalProgram:
    """Runs a command per input tuple and reads its observation lines.

    Each ``{name}`` in ``command`` is replaced by the input value; inputs are
    also exported as ``NSX_<name>`` environment variables.
    """

    name: str
    inputs: tuple[VarDecl, ...]
    state: tuple[str, ...]
    command: str
    guard: str = ""
    step_limit: int = 256
    state_kinds: tuple[str, ...] = ()
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if not self.state_kinds:
            self.state_kinds = ("int",) * len(self.state)
        self.guard_ast = parse_constraint(self.guard, self.kinds()) if self.guard else None

    def kinds(self) -> dict[str, str]:
        out = {d.name: d.kind for d in self.inputs}
        out.update(zip(self.state, self.state_kinds))
        return out

    @property
    def negated_guard(self):
        return negate(self.guard_ast)

    @property
    def guard_type(self) -> str:
        return guard_type(self.negated_guard)

    def run(self, inputs: Mapping[str, int]) -> list[tuple[int, State]]:
        argv = [part.format(**inputs) for part in shlex.split(self.command)]
        env = dict(os.environ)
        env.update({f"NSX_{k}": str(v) for k, v in inputs.items()})
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, env=env,
                                  timeout=self.timeout, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProgramError(f"{self.name}: {exc}") from None
        if proc.returncode != 0:
            raise ProgramError(f"{self.name}: exit status {proc.returncode}")
        rows = []
        for cnt, values in parse_observations(proc.stdout)[: self.step_limit + 1]:
            missing = [s for s in self.state if s not in values]
            if missing:
                raise ProgramError(f"{self.name}: observation lacks {', '.join(missing)}")
            rows.append((cnt, {s: values[s] for s in self.state}))
        cnts = [c for c, _ in rows]
        if cnts != sorted(set(cnts)):
            raise ProgramError(f"{self.name}: iteration counts must strictly increase")
        return rows


# -- the built-in loop suite ---------------------------------------------------------


def _ints(*specs) -> tuple[VarDecl, ...]:
    return tuple(VarDecl(n, "int", lo, hi) for n, lo, hi in specs)


def _fig8() -> TargetProgram:
    return TargetProgram(
        "fig8", _ints(("a", -10, 10), ("b", -10, 10)), ("c", "d"),
        init=lambda i: {"c": i["a"], "d": i["b"]},
        body=lambda i, s: {"c": s["c"] + s["d"] + 1, "d": s["d"] + 1},
        guard="c > d", step_limit=8,
        description="c=a; d=b; while (c > d) { c = c + d + 1; d = d + 1; }",
    )


def _gcd_step(i, s):
    x, y = s["x"], s["y"]
    return {"x": x - y, "y": y} if x > y else {"x": x, "y": y - x}


def _lcm_step(i, s):
    u, v = s["u"], s["v"]
    return {"u": u + i["a"], "v": v} if u < v else {"u": u, "v": v + i["b"]}


def _flag_step(i, s):
    k = s["k"] + 1
    return {"k": k, "f": 1 if k >= i["n"] else 0}


def _both_step(i, s):
    return {"p": s["p"] + (1 if s["p"] < i["n"] else 0), "q": s["q"] + (1 if s["q"] < i["m"] else 0)}


def _toward(i, s):
    x = s["x"]
    return {"x": x + 1 if x < i["n"] else x - 1}


def loop_suite() -> list[TargetProgram]:
    """Twenty-two integer loops; each negated guard is one of T1..T4."""
    P = TargetProgram
    return [
        # T1: negated guard uses <= or >=
        _fig8(),
        P("sum_to_n", _ints(("n", 0, 15)), ("i", "s"),
          init=lambda i: {"i": 0, "s": 0},
          body=lambda i, s: {"i": s["i"] + 1, "s": s["s"] + s["i"] + 1},
          guard="i < n", step_limit=16, description="triangular sum"),
        P("countdown2", _ints(("n", 0, 30)), ("x",),
          init=lambda i: {"x": i["n"]},
          body=lambda i, s: {"x": s["x"] - 2},
          guard="x > 0", step_limit=16, description="x steps down by two"),
        P("ps2", _ints(("k", 0, 12)), ("x", "y"),
          init=lambda i: {"x": 0, "y": 0},
          body=lambda i, s: {"x": s["x"] + 1, "y": s["y"] + 2 * s["x"] + 1},
          guard="x < k", step_limit=16, description="odd-number sum, y = x*x"),
        P("twostep", _ints(("n", 0, 20)), ("i", "j"),
          init=lambda i: {"i": 0, "j": 0},
          body=lambda i, s: {"i": s["i"] + 1, "j": s["j"] + 2},
          guard="i < n", step_limit=24, description="j tracks 2i"),
        P("affine", _ints(("x0", -10, 10), ("y", -3, 3), ("n", 0, 10)), ("c", "x"),
          init=lambda i: {"c": 0, "x": i["x0"]},
          body=lambda i, s: {"c": s["c"] + 1, "x": s["x"] + i["y"]},
          guard="c < n", step_limit=12, description="x = x0 + c*y"),
        P("drain", _ints(("r0", 0, 40), ("d", 1, 8)), ("r", "q"),
          init=lambda i: {"r": i["r0"], "q": 0},
          body=lambda i, s: {"r": s["r"] - i["d"], "q": s["q"] + 1},
          guard="r > 0", step_limit=48, description="subtract until non-positive"),
        # T2: negated guard uses < or >
        P("cohendiv", _ints(("x", 0, 40), ("y", 1, 8)), ("q", "r"),
          init=lambda i: {"q": 0, "r": i["x"]},
          body=lambda i, s: {"q": s["q"] + 1, "r": s["r"] - i["y"]},
          guard="r >= y", step_limit=48, description="division by repeated subtraction"),
        P("sqrt1", _ints(("n", 0, 60)), ("a", "s", "t"),
          init=lambda i: {"a": 0, "s": 1, "t": 1},
          body=lambda i, s: {"a": s["a"] + 1, "t": s["t"] + 2, "s": s["s"] + s["t"] + 2},
          guard="s <= n", step_limit=16, description="integer square root"),
        P("step3", _ints(("n", 0, 30)), ("i",),
          init=lambda i: {"i": 0},
          body=lambda i, s: {"i": s["i"] + 3},
          guard="i <= n", step_limit=16, description="stride three"),
        P("shrink", _ints(("x0", 0, 40), ("y", 0, 5)), ("x", "c"),
          init=lambda i: {"x": i["x0"], "c": 0},
          body=lambda i, s: {"x": s["x"] - i["y"] - 1, "c": s["c"] + 1},
          guard="x >= 0", step_limit=48, description="decrement by y+1"),
        P("freire", _ints(("n", 0, 40)), ("x", "r"),
          init=lambda i: {"x": i["n"], "r": 0},
          body=lambda i, s: {"x": s["x"] - s["r"], "r": s["r"] + 1},
          guard="x >= r", step_limit=16, description="triangular root"),
        # T3: negated guard uses == or !=
        P("gcd", _ints(("x0", 1, 15), ("y0", 1, 15)), ("x", "y"),
          init=lambda i: {"x": i["x0"], "y": i["y0"]},
          body=_gcd_step, guard="x != y", step_limit=16, description="subtractive gcd"),
        P("mannadiv", _ints(("n", 0, 20)), ("x", "y"),
          init=lambda i: {"x": i["n"], "y": 0},
          body=lambda i, s: {"x": s["x"] - 1, "y": s["y"] + 2},
          guard="x != 0", step_limit=24, description="count down, double up"),
        P("flag", _ints(("n", 1, 15)), ("k", "f"),
          init=lambda i: {"k": 0, "f": 0},
          body=_flag_step, guard="f == 0", step_limit=16, description="loop until a flag flips"),
        P("lcm", _ints(("a", 1, 6), ("b", 1, 6)), ("u", "v"),
          init=lambda i: {"u": i["a"], "v": i["b"]},
          body=_lcm_step, guard="u != v", step_limit=16, description="least common multiple"),
        P("toward", _ints(("x0", -10, 10), ("n", -10, 10)), ("x",),
          init=lambda i: {"x": i["x0"]},
          body=_toward, guard="x != n", step_limit=24, description="walk to a target"),
        # T4: negated guard is a conjunction or disjunction
        P("meet", _ints(("n", 0, 15), ("y0", 0, 15)), ("x", "y"),
          init=lambda i: {"x": 0, "y": i["y0"]},
          body=lambda i, s: {"x": s["x"] + 1, "y": s["y"] - 1},
          guard="x < n && y > 0", step_limit=16, description="two counters, first to finish"),
        P("both", _ints(("n", 0, 12), ("m", 0, 12)), ("p", "q"),
          init=lambda i: {"p": 0, "q": 0},
          body=_both_step, guard="p < n || q < m", step_limit=16, description="two counters, both finish"),
        P("subgcd", _ints(("x0", 1, 15), ("y0", 1, 15)), ("x", "y"),
          init=lambda i: {"x": i["x0"], "y": i["y0"]},
          body=_gcd_step, guard="x > 0 && y > 0", step_limit=16,
          description="subtract until one side vanishes"),
        P("chase", _ints(("s0", 0, 10), ("t0", 0, 20), ("n", 0, 15)), ("k", "s", "t"),
          init=lambda i: {"k": 0, "s": i["s0"], "t": i["t0"]},
          body=lambda i, s: {"k": s["k"] + 1, "s": s["s"] + 2, "t": s["t"] + 1},
          guard="k < n && s != t", step_limit=16, description="s gains on t"),
        P("knuth", _ints(("x0", 0, 10), ("y0", 0, 10), ("n", 0, 20)), ("x", "y"),
          init=lambda i: {"x": i["x0"], "y": i["y0"]},
          body=lambda i, s: {"x": s["x"] + 2, "y": s["y"] + 1},
          guard="x + y < n || x < y", step_limit=16, description="grow until both conditions hold"),
    ]


def get_program(name: str) -> TargetProgram:
    for p in loop_suite():
        if p.name == name:
            return p
    if name == "http":
        from .exploit import http_program
        return http_program()
    raise KeyError(name)


def program_names() -> list[str]:
    return [p.name for p in loop_suite()] + ["http"]
