"""Sampling, dataset assembly, and the loop / exploit task runners."""

from __future__ import annotations

import logging
import math
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import nnet
from ..dataset import Dataset
from ..lang import (
    Atom, ConstraintFile, NeuralDecl, Num, Or, Var, VarDecl, eval_constraint, free_vars, parse,
    print_constraint, print_file,
)
from ..mixed_solver import MixedConfig, SolveResult
from ..mixed_solver import solve as mixed_solve
from .exploit import MSGBUF_SIZE, exploit_constraints, process_request, request_from_assignment

log = logging.getLogger(__name__)

_STR_CHARS = string.ascii_lowercase + string.digits


# -- sampling ---------------------------------------------------------------------


def _draw(p, rng: np.random.Generator) -> dict[str, object]:
    if hasattr(p, "draw"):
        return p.draw(rng)
    out: dict[str, object] = {}
    for d in p.inputs:
        if d.kind == "int":
            out[d.name] = int(rng.integers(int(d.lo), int(d.hi) + 1))
        elif d.kind == "real":
            out[d.name] = float(rng.uniform(d.lo, d.hi))
        else:
            n = int(rng.integers(0, (d.maxlen or 16) + 1))
            out[d.name] = "".join(rng.choice(list(_STR_CHARS), size=n))
    return out


def input_columns(p) -> list[tuple[str, str]]:
    """Dataset columns for the inputs; strings contribute their lengths."""
    return [(f"len_{d.name}", "int") if d.kind == "str" else (d.name, d.kind) for d in p.inputs]


def sample(p, n: int, seed: int, diagnostics: dict | None = None, jobs: int = 1) -> Dataset:
    """Execute ``p`` on ``n`` seeded random inputs and flatten every observation."""
    if n < 1:
        raise ValueError("need at least one run")
    rng = np.random.default_rng(seed)
    draws = [_draw(p, rng) for _ in range(n)]

    def run_one(inputs):
        try:
            return p.run(inputs), None
        except Exception as exc:  # a crashing target only loses its own rows
            return None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, draws))
    else:
        results = [run_one(x) for x in draws]

    cols = input_columns(p)
    names = [c for c, _ in cols] + ["cnt", *p.state]
    kinds = [k for _, k in cols] + ["int", *p.state_kinds]
    rows, failed, empty = [], 0, 0
    for inputs, (obs, err) in zip(draws, results):
        if err is not None:
            failed += 1
            continue
        if not obs:
            empty += 1
            continue
        head = [len(inputs[d.name]) if d.kind == "str" else inputs[d.name] for d in p.inputs]
        for cnt, state in obs:
            rows.append([*head, cnt, *(state[s] for s in p.state)])
    if diagnostics is not None:
        diagnostics.update(runs=n, failed=failed, no_observation=empty, rows=len(rows))
    return Dataset(tuple(names), tuple(kinds), np.array(rows, dtype=float).reshape(len(rows), len(names)))


def split(d: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``ratio`` share becomes the training set."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    if len(d) < 2:
        raise ValueError("need at least two rows to split")
    perm = np.random.default_rng(seed).permutation(len(d))
    k = min(max(1, int(round(len(d) * ratio))), len(d) - 1)
    return d.take(perm[:k]), d.take(perm[k:])


def subsample(d: Dataset, max_rows: int, seed: int) -> Dataset:
    if len(d) <= max_rows:
        return d
    idx = np.sort(np.random.default_rng(seed).permutation(len(d))[:max_rows])
    return d.take(idx)


# -- configuration and reports -------------------------------------------------------


@dataclass
class TaskConfig:
    runs: int = 2000
    max_rows: int = 10_000
    split_ratio: float = 0.8
    seed: int = 0
    attempts: int = 3
    ne_attempts: int = 10
    train: nnet.TrainConfig = field(default_factory=nnet.TrainConfig)
    solver: MixedConfig = field(default_factory=MixedConfig)
    workdir: str | None = None
    jobs: int = 1


@dataclass
class TaskReport:
    program: str
    guard_type: str = ""
    verdict: str = "UNKNOWN"
    t_ns: int | None = None
    t_ne: int | None = None
    accuracy: float = math.nan
    validated: bool = False
    model_relative_only: bool = False
    witness: dict[str, object] = field(default_factory=dict)
    stage: str = ""
    mixed2_trials: int = 0
    rows: int = 0
    samples: int = 0
    train_seconds: float = 0.0
    solve_seconds: float = 0.0
    notes: list[str] = field(default_factory=list)
    extra: dict[str, object] = field(default_factory=dict)

    def to_kv(self) -> str:
        lines = [
            f"program={self.program}",
            f"guard_type={self.guard_type}",
            f"verdict={self.verdict}",
            f"t_ns={self.t_ns if self.t_ns is not None else '-'}",
            f"t_ne={self.t_ne if self.t_ne is not None else '-'}",
            f"accuracy={self.accuracy:.4f}",
            f"validated={str(self.validated).lower()}",
            f"model_relative_only={str(self.model_relative_only).lower()}",
            f"stage={self.stage}",
            f"mixed2_trials={self.mixed2_trials}",
            f"rows={self.rows}",
            f"samples={self.samples}",
            f"train_seconds={self.train_seconds:.2f}",
            f"solve_seconds={self.solve_seconds:.2f}",
        ]
        lines += [f"witness.{k}={v}" for k, v in sorted(self.witness.items())]
        lines += [f"{k}={v}" for k, v in sorted(self.extra.items())]
        lines += [f"note={n}" for n in self.notes]
        return "\n".join(lines) + "\n"


TABLE_HEADER = ("program", "type", "T_NS", "T_NE", "accuracy", "validated")


def format_table(reports: Sequence[TaskReport]) -> str:
    rows = [TABLE_HEADER]
    for r in reports:
        rows.append((
            r.program, r.guard_type,
            str(r.t_ns) if r.t_ns is not None else "-",
            str(r.t_ne) if r.t_ne is not None else "-",
            f"{r.accuracy:.3f}", "yes" if r.validated else ("model-only" if r.model_relative_only else "no"),
        ))
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_HEADER))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows) + "\n"


# -- loop tasks ------------------------------------------------------------------------


def _observed_range(data: Dataset, name: str) -> tuple[int, int]:
    col = data.column(name)
    return int(math.floor(col.min())), int(math.ceil(col.max()))


def loop_constraint_file(p, data: Dataset, model_path: str) -> ConstraintFile:
    """``N: inputs, cnt -> state`` conjoined with the negated loop guard."""
    decls = [VarDecl(d.name, d.kind, d.lo, d.hi) for d in p.inputs]
    decls.append(VarDecl("cnt", "int", *_observed_range(data, "cnt")))
    for s, k in zip(p.state, p.state_kinds):
        lo, hi = _observed_range(data, s)
        decls.append(VarDecl(s, k, lo, hi))
    neural = NeuralDecl(model_path, (*(d.name for d in p.inputs), "cnt"), tuple(p.state))
    return ConstraintFile(decls, [p.negated_guard], [neural])


def validate_witness(p, witness: Mapping[str, object]) -> tuple[bool, str]:
    """Re-run ``p`` on the witness inputs and test the negated guard at ``cnt``."""
    inputs = {d.name: witness[d.name] for d in p.inputs}
    cnt = int(witness["cnt"])
    rows = dict(p.run(inputs))
    if cnt not in rows:
        return False, f"iteration {cnt} is never reached (run ends at {max(rows)})"
    env = {**inputs, **rows[cnt]}
    if not eval_constraint(p.negated_guard, env):
        return False, f"state at iteration {cnt} is {rows[cnt]}, which still satisfies the guard"
    return True, f"state at iteration {cnt} is {rows[cnt]}"


def block_assignment(a: Mapping[str, object], names) -> object:
    """Clause excluding ``a`` restricted to ``names``: a counterexample from re-execution."""
    out = None
    for n in names:
        atom = Atom("!=", Var(n), Num(a[n]))
        out = atom if out is None else Or(out, atom)
    return out


def train_program_model(p, cfg: TaskConfig, report: TaskReport):
    diag: dict = {}
    data = sample(p, cfg.runs, cfg.seed, diag, jobs=cfg.jobs)
    data = subsample(data, cfg.max_rows, cfg.seed)
    report.rows = len(data)
    report.samples = diag.get("runs", 0)
    if diag.get("failed"):
        report.notes.append(f"{diag['failed']} runs raised and were skipped")
    train_set, held_out = split(data, cfg.split_ratio, cfg.seed)
    inputs = [c for c, _ in input_columns(p)] + ["cnt"]
    started = time.perf_counter()
    model, _ = nnet.train(train_set, inputs, list(p.state), replace(cfg.train, seed=cfg.seed))
    report.train_seconds = time.perf_counter() - started
    report.accuracy = nnet.accuracy(model, held_out)
    return data, model


def run_loop_task(p, cfg: TaskConfig | None = None, guard=None) -> TaskReport:
    """Learn the loop, solve ``N and not guard``, and re-execute any witness."""
    cfg = cfg or TaskConfig()
    if guard is not None:
        p = replace(p, guard=guard if isinstance(guard, str) else print_constraint(guard))
    report = TaskReport(p.name, p.guard_type)
    data, model = train_program_model(p, cfg, report)
    model_path = f"{p.name}.nsx"
    cf = loop_constraint_file(p, data, model_path)
    if cfg.workdir:
        out = Path(cfg.workdir)
        out.mkdir(parents=True, exist_ok=True)
        nnet.save(model, out / model_path)
        (out / f"{p.name}.nsc").write_text(print_file(cf), encoding="utf-8")
        data.save(out / f"{p.name}.csv")

    started = time.perf_counter()
    guard_vars = sorted(free_vars(p.negated_guard) | {d.name for d in p.inputs} | {"cnt"})
    blocked: list = []
    for attempt in range(1, max(cfg.attempts, cfg.ne_attempts) + 1):
        if report.t_ns is None and attempt > cfg.attempts:
            break
        solver_cfg = replace(cfg.solver, seed=cfg.solver.seed + cfg.seed * 1000 + attempt - 1,
                             compat_unsat=False)
        cf_t = ConstraintFile(cf.decls, list(cf.symbolic) + blocked, cf.neural)
        res = mixed_solve(cf_t, {model_path: model}, solver_cfg)
        if res.verdict == "UNSAT":
            if not blocked:
                report.verdict = "UNSAT"
            report.notes.append(f"attempt {attempt}: symbolic part refuted")
            break
        if res.verdict != "SAT":
            continue
        if report.t_ns is None:
            report.t_ns = attempt
            report.verdict = "SAT"
        ok, why = validate_witness(p, res.assignment)
        report.notes.append(f"attempt {attempt}: {why}")
        if not report.witness or ok:
            report.witness = dict(res.assignment)
            report.stage = res.stats.stage
            report.mixed2_trials = res.stats.mixed2_trials if res.stats.stage == "mixed2" else 0
        if ok:
            report.t_ne = attempt
            report.validated = True
            break
        blocked.append(block_assignment(res.assignment, guard_vars))
    report.solve_seconds = time.perf_counter() - started
    report.model_relative_only = report.verdict == "SAT" and not report.validated
    return report


def run_suite(programs, cfg: TaskConfig | None = None, progress=None) -> list[TaskReport]:
    cfg = cfg or TaskConfig()
    out = []
    for p in programs:
        r = run_loop_task(p, cfg)
        out.append(r)
        if progress is not None:
            progress(r)
    return out


# -- the exploit task ----------------------------------------------------------------


def run_exploit_task(
    p=None,
    vuln: str = "ptr > 99",
    cfg: TaskConfig | None = None,
) -> TaskReport:
    """Learn ``{uri_length, ver_length} -> ptr`` and solve for an overflowing request."""
    from .exploit import http_program

    p = p or http_program()
    cfg = cfg or TaskConfig()
    report = TaskReport(p.name, "exploit")
    diag: dict = {}
    data = sample(p, cfg.runs, cfg.seed, diag, jobs=cfg.jobs)
    report.samples = diag["runs"]
    report.rows = len(data)
    train_set, held_out = split(data, cfg.split_ratio, cfg.seed)
    started = time.perf_counter()
    model, _ = nnet.train(train_set, ["uri_length", "ver_length"], ["ptr"], replace(cfg.train, seed=cfg.seed))
    report.train_seconds = time.perf_counter() - started
    report.accuracy = nnet.accuracy(model, held_out)

    model_path = "http.nsx"
    text = exploit_constraints(model_path)
    if vuln != "ptr > 99":
        text = text.replace("assert ptr > 99;", f"assert {vuln};")
    cf = parse(text)
    if cfg.workdir:
        out = Path(cfg.workdir)
        out.mkdir(parents=True, exist_ok=True)
        nnet.save(model, out / model_path)
        (out / "http.nsc").write_text(text, encoding="utf-8")
        data.save(out / "http.csv")

    started = time.perf_counter()
    res: SolveResult = mixed_solve(cf, {model_path: model}, replace(cfg.solver, seed=cfg.solver.seed + cfg.seed))
    report.solve_seconds = time.perf_counter() - started
    report.verdict = res.verdict
    report.stage = res.stats.stage
    report.mixed2_trials = res.stats.mixed2_trials
    if res.verdict == "SAT":
        report.t_ns = 1
        report.witness = {k: v for k, v in res.assignment.items() if not isinstance(v, str)}
        outcome = check_exploit(res.assignment)
        report.validated = outcome.overflow
        report.t_ne = 1 if outcome.overflow else None
        report.extra["request_length"] = len(request_from_assignment(res.assignment))
        report.extra["write_index"] = outcome.ptr
        report.extra["overflow"] = str(outcome.overflow).lower()
        report.model_relative_only = not outcome.overflow
    return report


def check_exploit(assignment: Mapping[str, object]):
    """Build the request from a solved assignment and run the parser on it."""
    return process_request(request_from_assignment(assignment))
