"""Solving conjunctions of symbolic and neural constraints.

The constraint-variable graph is split into connected components. Purely
symbolic components go to the symbolic solver first (any UNSAT ends the run
before a network is touched), purely neural ones are satisfied by running
the network forward, and mixed components are attempted in two ways:

* conflict-clause backtracking: solve the symbolic part, fix those values in
  the networks, search the remaining network inputs, and on failure exclude
  the symbolic pick and try again;
* joint search: encode the symbolic part as a loss evaluated on network
  outputs and minimize it over the free inputs.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import nnet
from .lang import (
    Atom, Constraint, ConstraintFile, NeuralDecl, Num, StrLen, Var, VarDecl, conj,
    conjuncts, eval_constraint, free_vars,
)
from .loss_encode import (
    DEFAULT_ALPHA, DEFAULT_BETA, ComposedLoss, NeuralLink, encode, length_var, lower_strings,
    validate_params,
)
from .neusolv import Found, SearchConfig, search, search_multi, initial_point, trial_seed
from .symsolv import (
    ConflictClause, Incomplete, Sat, SolverConfig, SymSolvError, Unsat, check_sat,
    numeric_bounds, string_maxlen,
)
from .symsolv import solve as sym_solve

log = logging.getLogger(__name__)


class MixedSolverError(Exception):
    pass


# -- results ------------------------------------------------------------------


@dataclass
class Stats:
    """Instrumentation shared by every stage of one solve call."""

    model_evals: int = 0
    symbolic_calls: int = 0
    mixed1_iterations: int = 0
    mixed1_searches: int = 0
    mixed2_trials: int = 0
    proposals: list[dict] = field(default_factory=list)
    conflicts: list[ConflictClause] = field(default_factory=list)
    best_losses: dict[str, float] = field(default_factory=dict)
    stage: str = ""
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)


@dataclass
class SolveResult:
    verdict: str
    assignment: dict[str, object] = field(default_factory=dict)
    stats: Stats = field(default_factory=Stats)
    diagnostics: dict[str, object] = field(default_factory=dict)

    @property
    def sat(self) -> bool:
        return self.verdict == "SAT"

    def report(self) -> str:
        """Line-oriented ``key=value`` record."""
        lines = [f"verdict={self.verdict}"]
        for k in sorted(self.assignment):
            lines.append(f"value.{k}={format_value(self.assignment[k])}")
        s = self.stats
        lines += [
            f"stage={s.stage}",
            f"symbolic_calls={s.symbolic_calls}",
            f"mixed1_iterations={s.mixed1_iterations}",
            f"mixed1_searches={s.mixed1_searches}",
            f"mixed2_trials={s.mixed2_trials}",
            f"model_evals={s.model_evals}",
            f"wall_time={s.wall_time:.3f}",
        ]
        for k in sorted(s.best_losses):
            lines.append(f"best_loss.{k}={s.best_losses[k]:.6g}")
        for k in sorted(self.diagnostics):
            lines.append(f"diag.{k}={self.diagnostics[k]}")
        return "\n".join(lines) + "\n"


def format_value(v) -> str:
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


@dataclass
class MixedConfig:
    max_trial1: int = 10
    max_trial2: int = 100
    mixed2_trials: int = 10
    max_enumerations: int = 10_000
    learning_rate: float = 0.1
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    rel_tol: float = 1e-2
    seed: int = 0
    compat_unsat: bool = False
    jobs: int = 1
    use_mixed1: bool = True
    use_mixed2: bool = True
    symbolic: SolverConfig = field(default_factory=SolverConfig)
    bridge: object | None = None

    def __post_init__(self) -> None:
        validate_params(self.alpha, self.beta)
        for name in ("max_trial1", "max_trial2", "mixed2_trials", "max_enumerations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


# -- models -------------------------------------------------------------------


class CountingModel:
    """Wraps a network and counts forward/backward passes."""

    def __init__(self, model: nnet.MlpModel, stats: Stats):
        self.model = model
        self.stats = stats

    def forward(self, x):
        self.stats.model_evals += 1
        return self.model.forward(x)

    def value_and_input_grad(self, x, downstream):
        self.stats.model_evals += 1
        return self.model.value_and_input_grad(x, downstream)


def load_models(cf: ConstraintFile, base: str | Path = ".") -> dict[str, nnet.MlpModel]:
    out = {}
    for n in cf.neural:
        if n.model_path not in out:
            path = Path(n.model_path)
            out[n.model_path] = nnet.load(path if path.is_absolute() else Path(base) / path)
    return out


def check_models(cf: ConstraintFile, models: Mapping[str, nnet.MlpModel]) -> None:
    for n in cf.neural:
        if n.model_path not in models:
            raise MixedSolverError(f"no model loaded for {n.model_path!r}")
        m = models[n.model_path]
        if len(m.input_names) != len(n.inputs) or len(m.output_names) != len(n.outputs):
            raise MixedSolverError(
                f"model {n.model_path!r} maps {len(m.input_names)} -> {len(m.output_names)}, "
                f"declaration needs {len(n.inputs)} -> {len(n.outputs)}")


# -- graph --------------------------------------------------------------------


@dataclass
class Component:
    symbolic: list[Constraint]
    neural: list[NeuralDecl]
    variables: list[str]

    @property
    def kind(self) -> str:
        if self.symbolic and self.neural:
            return "Mixed"
        return "PureNeural" if self.neural else "PureSymbolic"


@dataclass
class ConstraintGraph:
    constraints: list[object]
    edges: dict[int, list[str]]
    components: list[Component]


def _node_vars(node) -> list[str]:
    if isinstance(node, NeuralDecl):
        return [*node.inputs, *node.outputs]
    return sorted(free_vars(node))


def build_graph(cf: ConstraintFile) -> ConstraintGraph:
    """Bipartite constraint-variable graph split by breadth-first search.

    Each top-level conjunct is its own node; components keep file order.
    """
    nodes: list[object] = []
    for c in cf.symbolic:
        nodes.extend(conjuncts(c))
    nodes.extend(cf.neural)
    edges = {i: _node_vars(n) for i, n in enumerate(nodes)}
    by_var: dict[str, list[int]] = {}
    for i, vs in edges.items():
        for v in vs:
            by_var.setdefault(v, []).append(i)
    seen: set[int] = set()
    comps = []
    for start in range(len(nodes)):
        if start in seen:
            continue
        seen.add(start)
        queue, members, vars_seen = deque([start]), [], []
        while queue:
            i = queue.popleft()
            members.append(i)
            for v in edges[i]:
                if v in vars_seen:
                    continue
                vars_seen.append(v)
                for j in by_var[v]:
                    if j not in seen:
                        seen.add(j)
                        queue.append(j)
        members.sort()
        comps.append(Component(
            symbolic=[nodes[i] for i in members if not isinstance(nodes[i], NeuralDecl)],
            neural=[nodes[i] for i in members if isinstance(nodes[i], NeuralDecl)],
            variables=sorted(vars_seen),
        ))
    return ConstraintGraph(nodes, edges, comps)


# -- shared helpers -------------------------------------------------------------


class _Context:
    def __init__(self, cf: ConstraintFile, models, cfg: MixedConfig, stats: Stats):
        self.cf = cf
        self.decls = cf.decl_map()
        self.cfg = cfg
        self.stats = stats
        self.models = {k: CountingModel(m, stats) for k, m in models.items()}

    def kind(self, name: str) -> str:
        return self.decls[name].kind

    def domain(self, name: str) -> tuple[float, float]:
        return numeric_bounds(self.decls[name])

    def in_domain(self, name: str, value) -> bool:
        d = self.decls[name]
        if d.kind == "str":
            return len(value) <= string_maxlen(d)
        lo, hi = numeric_bounds(d)
        return lo <= value <= hi

    def link(self, n: NeuralDecl) -> NeuralLink:
        return NeuralLink(self.models[n.model_path], tuple(n.inputs), tuple(n.outputs))

    def realize_output(self, name: str, value: float):
        return int(np.rint(value)) if self.kind(name) == "int" else float(value)

    def outputs_match(self, n: NeuralDecl, env: Mapping[str, object]) -> bool:
        x = np.array([float(env[v]) for v in n.inputs])
        y = self.models[n.model_path].forward(x[None, :])[0]
        for name, pred in zip(n.outputs, y):
            if not bool(nnet.output_matches(self.kind(name), pred, float(env[name]), self.cfg.rel_tol)):
                return False
        return True

    def sym_solve(self, constraints, conflicts=(), names=None):
        self.stats.symbolic_calls += 1
        names = set(names) if names is not None else set().union(*(free_vars(c) for c in constraints))
        decls = [d for d in self.cf.decls if d.name in names]
        if self.cfg.bridge is not None:
            return self.cfg.bridge.solve(constraints, conflicts, decls)
        return sym_solve(constraints, conflicts, decls, self.cfg.symbolic)

    def search_config(self, names, seed) -> SearchConfig:
        doms, ints = {}, set()
        for n in names:
            if n in self.decls:
                doms[n] = self.domain(n)
                if self.kind(n) == "int":
                    ints.add(n)
            else:
                # length variable of a string
                s = n[len("len_"):]
                doms[n] = (0.0, float(string_maxlen(self.decls[s])))
                ints.add(n)
        return SearchConfig(
            max_enumerations=self.cfg.max_enumerations, learning_rate=self.cfg.learning_rate,
            seed=seed, per_var_domains=doms, integer_vars=frozenset(ints), jobs=self.cfg.jobs,
        )


def _network_order(neural: Sequence[NeuralDecl]) -> list[NeuralDecl] | None:
    """Topological order so producers precede consumers; None on a cycle."""
    produced = {o: i for i, n in enumerate(neural) for o in n.outputs}
    pending = list(range(len(neural)))
    done: set[int] = set()
    order = []
    while pending:
        ready = [i for i in pending
                 if all(v not in produced or produced[v] in done for v in neural[i].inputs)]
        if not ready:
            return None
        for i in ready:
            done.add(i)
            order.append(neural[i])
            pending.remove(i)
    return order


# -- pure stages -----------------------------------------------------------------


def _solve_pure_neural(ctx: _Context, comp: Component, seed: int) -> dict | None:
    order = _network_order(comp.neural)
    if order is None:
        return None
    produced = {o for n in comp.neural for o in n.outputs}
    free = sorted({v for n in comp.neural for v in n.inputs} - produced)
    scfg = ctx.search_config(free, seed)
    for t in range(ctx.cfg.max_trial1):
        env = {}
        x0 = initial_point(free, scfg, trial_seed(seed, t))
        for v in free:
            env[v] = int(x0[v]) if ctx.kind(v) == "int" else x0[v]
        ok = True
        for n in order:
            x = np.array([float(env[v]) for v in n.inputs])
            y = ctx.models[n.model_path].forward(x[None, :])[0]
            for name, val in zip(n.outputs, y):
                env[name] = ctx.realize_output(name, val)
                ok = ok and ctx.in_domain(name, env[name])
        if ok and all(ctx.outputs_match(n, env) for n in comp.neural):
            return env
    return None


# -- mixed I ---------------------------------------------------------------------


def _numeric_names(ctx: _Context, names) -> list[str]:
    return [n for n in names if ctx.kind(n) != "str"]


def mixed_solve_I(ctx: _Context, comp: Component, conflicts: list[ConflictClause], seed: int) -> SolveResult:
    """Conflict-clause loop; ``conflicts`` is extended in place."""
    order = _network_order(comp.neural)
    if order is None:
        return SolveResult("UNKNOWN", diagnostics={"mixed1": "cyclic network dependencies"})
    sym_names = sorted(set().union(*(free_vars(c) for c in comp.symbolic)))
    clause_names = _numeric_names(ctx, sym_names)
    produced = {o for n in comp.neural for o in n.outputs}
    neural_inputs = sorted({v for n in comp.neural for v in n.inputs})
    best = math.inf
    for it in range(ctx.cfg.max_trial2):
        ctx.stats.mixed1_iterations += 1
        try:
            verdict = ctx.sym_solve(comp.symbolic, conflicts, sym_names)
        except Incomplete as exc:
            return SolveResult("UNKNOWN", diagnostics={"mixed1": f"symbolic search incomplete: {exc}"})
        if isinstance(verdict, Unsat):
            if not conflicts:
                return SolveResult("UNSAT", diagnostics={"mixed1": "symbolic part refuted"})
            # the clauses came from failed searches, so this is exhaustion, not a proof
            ctx.stats.best_losses["mixed1"] = best
            return SolveResult("UNKNOWN", diagnostics={
                "mixed1": f"every symbolic assignment rejected after {it} conflicts"})
        bound = dict(verdict.assignment)
        proposal = {n: bound[n] for n in clause_names}
        assert proposal not in ctx.stats.proposals, "symbolic solver re-proposed a rejected assignment"
        ctx.stats.proposals.append(proposal)

        free = [v for v in neural_inputs if v not in bound and v not in produced]
        required = [o for o in sorted(produced) if o in bound]
        fixed = {k: float(v) for k, v in bound.items() if ctx.kind(k) != "str"}
        links = [ctx.link(n) for n in order]

        def accept(cand, bound=bound, links=links):
            env = dict(bound)
            env.update(cand)
            for link, n in zip(links, order):
                x = np.array([float(env[v]) for v in n.inputs])
                y = link.model.forward(x[None, :])[0]
                for name, val in zip(n.outputs, y):
                    if name in bound:
                        if not bool(nnet.output_matches(ctx.kind(name), val, float(bound[name]),
                                                        ctx.cfg.rel_tol)):
                            return False
                    else:
                        env[name] = ctx.realize_output(name, val)
                        if not ctx.in_domain(name, env[name]):
                            return False
            accept.env = env
            return True

        if not free:
            if accept({}):
                return SolveResult("SAT", accept.env, diagnostics={"mixed1": "fully assigned"})
        else:
            target = conj(Atom("==", Var(o), Num(float(bound[o]))) for o in required)
            base = encode(target if target is not None else Atom("<=", Num(0.0), Num(1.0)),
                          alpha=ctx.cfg.alpha, beta=ctx.cfg.beta)
            lf = ComposedLoss(base, tuple(free), links, fixed)
            ctx.stats.mixed1_searches += 1
            out = search_multi(lf, accept, ctx.search_config(free, seed + it), ctx.cfg.max_trial1)
            if isinstance(out, Found):
                accept(out.assignment)
                return SolveResult("SAT", accept.env, diagnostics={
                    "mixed1": f"found at iteration {it + 1}, trial {out.trial + 1}"})
            best = min(best, out.best_loss)
        clause = ConflictClause.excluding(bound, clause_names) if clause_names else None
        if clause is None:
            break
        conflicts.append(clause)
        ctx.stats.conflicts.append(clause)
    ctx.stats.best_losses["mixed1"] = best
    return SolveResult("UNKNOWN", diagnostics={"mixed1": f"exhausted {ctx.stats.mixed1_iterations} iterations"})


# -- mixed II --------------------------------------------------------------------


def mixed_solve_II(ctx: _Context, comp: Component, seed: int) -> SolveResult:
    """Joint loss over the free inputs, networks evaluated inside the loss."""
    order = _network_order(comp.neural)
    if order is None:
        return SolveResult("UNKNOWN", diagnostics={"mixed2": "cyclic network dependencies"})
    kinds = {d.name: d.kind for d in ctx.cf.decls}
    produced = {o for n in comp.neural for o in n.outputs}
    strings = [v for v in comp.variables if ctx.kind(v) == "str"]
    numeric = [v for v in comp.variables if ctx.kind(v) != "str" and v not in produced]
    search_vars = numeric + [length_var(s) for s in strings]
    lowered = [lowered for c in comp.symbolic if (lowered := lower_strings(c, kinds)) is not None]
    target = conj(lowered)
    base = encode(target if target is not None else Atom("<=", Num(0.0), Num(1.0)),
                  alpha=ctx.cfg.alpha, beta=ctx.cfg.beta)
    links = [ctx.link(n) for n in order]
    lf = ComposedLoss(base, tuple(search_vars), links)

    def realize(cand) -> dict | None:
        env = lf.realize(cand)
        for name in produced:
            env[name] = ctx.realize_output(name, env[name])
            if not ctx.in_domain(name, env[name]):
                return None
        for v in numeric:
            env[v] = cand[v]
        return env

    def accept(cand):
        env = realize(cand)
        if env is None or not all(eval_constraint(c, env) for c in lowered):
            return False
        full = {k: v for k, v in env.items() if k in ctx.decls}
        if strings:
            pins = [Atom("==", Var(v), Num(float(full[v])))
                    for v in comp.variables if ctx.kind(v) != "str"]
            pins += [Atom("==", StrLen(Var(s)), Num(float(cand[length_var(s)]))) for s in strings]
            try:
                verdict = ctx.sym_solve(list(comp.symbolic) + pins, names=comp.variables)
            except (Incomplete, SymSolvError):
                return False
            if not isinstance(verdict, Sat):
                return False
            full.update({s: verdict.assignment[s] for s in strings})
        elif not check_sat(full, comp.symbolic):
            return False
        accept.env = full
        return True

    best = math.inf
    for t in range(ctx.cfg.mixed2_trials):
        ctx.stats.mixed2_trials += 1
        scfg = ctx.search_config(search_vars, trial_seed(seed, t))
        x0 = initial_point(tuple(search_vars), scfg, trial_seed(seed, t))
        out = search(lf, accept, scfg, x0, trial=t)
        if isinstance(out, Found):
            accept(out.assignment)
            return SolveResult("SAT", accept.env, diagnostics={
                "mixed2": f"trial {t + 1}, enumeration {out.enumerations}"})
        best = min(best, out.best_loss)
    ctx.stats.best_losses["mixed2"] = best
    return SolveResult("UNKNOWN", diagnostics={"mixed2": f"exhausted {ctx.cfg.mixed2_trials} trials"})


# -- driver ----------------------------------------------------------------------


def verify(cf: ConstraintFile, models, a: Mapping[str, object], rel_tol: float = 1e-2) -> list[str]:
    """Reasons the assignment fails the file; empty when it satisfies it."""
    problems = []
    decls = cf.decl_map()
    for name, d in decls.items():
        if name not in a:
            problems.append(f"{name} unbound")
            continue
        v = a[name]
        if d.kind == "str":
            if not isinstance(v, str) or len(v) > string_maxlen(d):
                problems.append(f"{name} outside its declared length")
        else:
            lo, hi = numeric_bounds(d)
            if not (isinstance(v, (int, float, np.integer, np.floating)) and lo <= v <= hi):
                problems.append(f"{name}={v} outside [{lo}, {hi}]")
            if d.kind == "int" and float(v) != int(v):
                problems.append(f"{name}={v} is not an integer")
    if problems:
        return problems
    for i, c in enumerate(cf.symbolic):
        if not eval_constraint(c, a):
            problems.append(f"assert #{i + 1} is false")
    for n in cf.neural:
        m = models[n.model_path]
        x = np.array([float(a[v]) for v in n.inputs])
        y = m.forward(x[None, :])[0]
        for name, pred in zip(n.outputs, y):
            if not bool(nnet.output_matches(decls[name].kind, pred, float(a[name]), rel_tol)):
                problems.append(f"network {n.model_path} predicts {name}={pred:.6g}, bound {a[name]}")
    return problems


def _default_value(d: VarDecl):
    if d.kind == "str":
        return ""
    lo, hi = numeric_bounds(d)
    v = min(max(0.0, lo), hi)
    return int(math.ceil(v)) if d.kind == "int" else float(v)


def solve(
    cf: ConstraintFile,
    models: Mapping[str, nnet.MlpModel] | None = None,
    cfg: MixedConfig | None = None,
) -> SolveResult:
    """Three-valued verdict for the whole file."""
    cfg = cfg or MixedConfig()
    models = dict(models or {})
    check_models(cf, models)
    stats = Stats()
    started = time.perf_counter()
    result = _solve(cf, models, cfg, stats)
    stats.wall_time = time.perf_counter() - started
    result.stats = stats
    if result.verdict == "UNKNOWN" and cfg.compat_unsat:
        result.diagnostics["collapsed_from"] = "UNKNOWN"
        result.verdict = "UNSAT"
    return result


def _solve(cf, models, cfg: MixedConfig, stats: Stats) -> SolveResult:
    ctx = _Context(cf, models, cfg, stats)
    graph = build_graph(cf)
    comps = graph.components
    assignment: dict[str, object] = {}
    diagnostics: dict[str, object] = {"components": ",".join(c.kind for c in comps) or "none"}

    stats.stage = "symbolic"
    for comp in (c for c in comps if c.kind == "PureSymbolic"):
        try:
            verdict = ctx.sym_solve(comp.symbolic, names=comp.variables)
        except Incomplete as exc:
            diagnostics["symbolic"] = f"incomplete: {exc}"
            return SolveResult("UNKNOWN", diagnostics=diagnostics)
        if isinstance(verdict, Unsat):
            diagnostics["symbolic"] = "refuted within declared domains"
            return SolveResult("UNSAT", diagnostics=diagnostics)
        assignment.update(verdict.assignment)

    stats.stage = "neural"
    for k, comp in enumerate(c for c in comps if c.kind == "PureNeural"):
        env = _solve_pure_neural(ctx, comp, cfg.seed + 7919 * (k + 1))
        if env is None:
            diagnostics["neural"] = "no forward evaluation landed inside the output domains"
            return SolveResult("UNKNOWN", diagnostics=diagnostics)
        assignment.update(env)

    for k, comp in enumerate(c for c in comps if c.kind == "Mixed"):
        seed = cfg.seed + 104729 * k
        result = SolveResult("UNKNOWN")
        if cfg.use_mixed1:
            stats.stage = "mixed1"
            result = mixed_solve_I(ctx, comp, [], seed)
            diagnostics.update(result.diagnostics)
            if result.verdict == "UNSAT":
                return SolveResult("UNSAT", diagnostics=diagnostics)
        if result.verdict != "SAT" and cfg.use_mixed2:
            stats.stage = "mixed2"
            result = mixed_solve_II(ctx, comp, seed)
            diagnostics.update(result.diagnostics)
        if result.verdict != "SAT":
            return SolveResult("UNKNOWN", diagnostics=diagnostics)
        assignment.update({k2: v for k2, v in result.assignment.items() if k2 in ctx.decls})

    for d in cf.decls:
        assignment.setdefault(d.name, _default_value(d))
    problems = verify(cf, models, assignment, cfg.rel_tol)
    if problems:
        diagnostics["verification"] = "; ".join(problems)
        return SolveResult("UNKNOWN", diagnostics=diagnostics)
    return SolveResult("SAT", assignment, diagnostics=diagnostics)
