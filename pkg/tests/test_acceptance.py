"""End-to-end acceptance checks.

Each test records one ``criterion N: PASS|FAIL ...`` line; the lines are printed in the
terminal summary (see conftest.py) and also when this file is run as a script.
"""

from __future__ import annotations

import contextlib
import io
import math
import random
import sys
import time

import numpy as np
import pytest

from gen import instance
from neurosym.cli import main
from neurosym.harness import TaskConfig, check_exploit, loop_suite, run_suite
from neurosym.lang import And, Arith, Atom, Num, Or, Var, parse
from neurosym.loss_encode import encode, minimum_implies_sat_check
from neurosym.mixed_solver import MixedConfig, Stats, _Context, build_graph, mixed_solve_I
from neurosym.symsolv import Sat, brute_force, check_sat, solve as sym_solve
from test_loss_encode import enc, random_loss
from test_mixed_solver import CONTRIVED, IDENTITY
from test_nnet import fd_gradient, kink_distance, random_model

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    assert ok, RESULTS[n]


def summary_lines() -> list[str]:
    return [RESULTS[k] for k in sorted(RESULTS)]


# -- shared runs ------------------------------------------------------------------------


def suite_fingerprint(reports):
    return [(r.program, r.verdict, r.t_ns, r.t_ne, r.mixed2_trials, tuple(sorted(r.witness.items())))
            for r in reports]


@pytest.fixture(scope="module")
def suite_run():
    started = time.perf_counter()
    reports = run_suite(loop_suite(), TaskConfig())
    return reports, time.perf_counter() - started


def run_exploit_cli(workdir) -> tuple[str, str, float]:
    """``bench --suite exploit`` writes model and constraints; ``solve`` answers them."""
    started = time.perf_counter()
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(["bench", "--suite", "exploit", "--workdir", str(workdir)])
    assert code == 0, out.getvalue()
    bench = out.getvalue()
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(["solve", str(workdir / "http.nsc")])
    return bench, out.getvalue().strip(), time.perf_counter() - started


@pytest.fixture(scope="module")
def exploit_run(tmp_path_factory):
    return run_exploit_cli(tmp_path_factory.mktemp("exploit"))


def parse_sat_line(line: str) -> dict:
    if not line.startswith("SAT "):
        return {}
    out = {}
    for pair in line.split()[1:]:
        k, v = pair.split("=", 1)
        out[k] = v[1:-1] if v.startswith('"') else float(v)
    return out


# -- 1: encoding soundness -------------------------------------------------------------------

ROWS = ("<", ">", "<=", ">=", "==", "!=", "and", "or")


def linear_expr(rng: random.Random):
    e = None
    for v in ("x", "y"):
        k = rng.randint(-2, 2)
        if k:
            t = Var(v) if k == 1 else Arith("*", Num(float(k)), Var(v))
            e = t if e is None else Arith("+", e, t)
    c = float(rng.randint(-3, 3))
    if e is None:
        return Num(c)
    return Arith("+", e, Num(c)) if c else e


def random_atom(rng: random.Random, op: str | None = None):
    return Atom(op or rng.choice(ROWS[:6]), linear_expr(rng), linear_expr(rng))


def test_criterion_1_encoding_soundness():
    started = time.perf_counter()
    failures, total = [], 0
    for i, row in enumerate(ROWS):
        rng = random.Random(1000 + i)
        for _ in range(200):
            if row == "and":
                c = And(random_atom(rng), random_atom(rng))
            elif row == "or":
                c = Or(random_atom(rng), random_atom(rng))
            else:
                c = random_atom(rng, row)
            lf = encode(c)
            if not minimum_implies_sat_check(c, lf, {n: (-5, 5) for n in lf.vars}):
                failures.append(row)
            total += 1
    elapsed = time.perf_counter() - started
    record(1, not failures and elapsed < 60,
           f"{total - len(failures)}/{total} constraints over 11x11 grids, {elapsed:.1f}s")


# -- 2: gradient checks ----------------------------------------------------------------------


def test_criterion_2_gradients():
    rng = np.random.default_rng(7)
    mlp_ok = mlp_n = 0
    while mlp_n < 100:
        m = random_model(rng)
        x = rng.normal(size=3) * 2
        if kink_distance(m, x) < 1e-2:
            continue
        down = rng.normal(size=2)
        _, g = m.value_and_input_grad(x, down)
        fd = fd_gradient(m, x, down, h=1e-6)
        mlp_n += 1
        mlp_ok += np.linalg.norm(g - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd))

    prng, nrng = random.Random(11), np.random.default_rng(11)
    loss_ok = loss_n = 0
    while loss_n < 100:
        lf = enc(random_loss(prng))
        x = {n: float(nrng.uniform(-3, 3)) for n in lf.vars}
        base = lf.eval(x)
        if not math.isfinite(base):
            continue
        fd, smooth = [], True
        for n in lf.vars:
            far_hi, far_lo = lf.eval({**x, n: x[n] + 1e-3}), lf.eval({**x, n: x[n] - 1e-3})
            if abs((far_hi - base) / 1e-3 - (base - far_lo) / 1e-3) > 1e-2:
                smooth = False
            fd.append((lf.eval({**x, n: x[n] + 1e-6}) - lf.eval({**x, n: x[n] - 1e-6})) / 2e-6)
        if not smooth:
            continue
        loss_n += 1
        loss_ok += np.linalg.norm(lf.grad(x) - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd))
    record(2, mlp_ok == mlp_n and loss_ok == loss_n,
           f"mlp {mlp_ok}/{mlp_n}, loss {loss_ok}/{loss_n} within 1e-4")


# -- 3: symsolv vs brute force ---------------------------------------------------------------


def test_criterion_3_symsolv_agreement():
    started = time.perf_counter()
    agree = 0
    for seed in range(500):
        cs, decls = instance(seed)
        got, want = sym_solve(cs, (), decls), brute_force(cs, decls)
        same = isinstance(got, Sat) == isinstance(want, Sat)
        if same and isinstance(got, Sat):
            same = check_sat(got.assignment, cs)
        agree += same
    elapsed = time.perf_counter() - started
    record(3, agree == 500 and elapsed < 120, f"{agree}/500 agree, {elapsed:.1f}s")


# -- 4, 5, 9: loop suite ------------------------------------------------------------------------


def test_criterion_4_loop_suite(suite_run):
    reports, elapsed = suite_run
    kinds = {r.guard_type for r in reports}
    sat = [r for r in reports if r.verdict == "SAT" and r.t_ns is not None and r.t_ns <= 3]
    bad = [r.program for r in reports if r.verdict == "SAT" and not r.validated]
    ok = (len(reports) >= 20 and kinds >= {"T1", "T2", "T3", "T4"} and len(sat) >= 0.9 * len(reports)
          and not bad and elapsed < 1800)
    record(4, ok, f"{len(sat)}/{len(reports)} SAT within 3 trials, "
                  f"{len(reports) - len(bad)}/{len(reports)} witnesses validated, {elapsed:.0f}s"
                  + (f", unvalidated: {','.join(bad)}" if bad else ""))


def test_criterion_5_accuracy(suite_run):
    reports, _ = suite_run
    good = [r for r in reports if r.accuracy >= 0.8]
    worst = min(reports, key=lambda r: r.accuracy)
    record(5, len(good) >= 0.7 * len(reports),
           f"{len(good)}/{len(reports)} programs with accuracy >= 0.8 (min {worst.program} {worst.accuracy:.3f})")


def test_criterion_9_mixed2_threshold(suite_run):
    reports, _ = suite_run
    via = [r for r in reports if r.stage == "mixed2"]
    over = [r.program for r in via if r.mixed2_trials > MixedConfig().mixed2_trials]
    record(9, not over, f"{len(via) - len(over)}/{len(via)} Mixed II solves within "
                        f"{MixedConfig().mixed2_trials} trials")


# -- 6: conflict clauses ---------------------------------------------------------------------


def test_criterion_6_conflict_clauses():
    cf = parse(CONTRIVED.format(hi=20))
    ctx = _Context(cf, IDENTITY, MixedConfig(), Stats())
    comp = next(c for c in build_graph(cf).components if c.kind == "Mixed")
    conflicts: list = []
    res = mixed_solve_I(ctx, comp, conflicts, seed=0)
    picks = ctx.stats.proposals
    repeats = sum(1 for i, p in enumerate(picks) for r in picks[:i] if p == r)
    violates = sum(1 for p in picks[5:] for c in conflicts if not c.satisfied_by(p))
    ok = (res.verdict == "SAT" and [p["y"] for p in picks[:5]] == list(range(5)) and repeats == 0 and violates == 0
          and len(conflicts) == 5 and ctx.stats.mixed1_iterations <= 100)
    record(6, ok, f"{len(conflicts)} conflict clauses, {len(picks)} proposals, "
                  f"{repeats} re-proposals, {ctx.stats.mixed1_iterations} iterations")


# -- 7: exploit ------------------------------------------------------------------------------


def test_criterion_7_exploit(exploit_run):
    bench, line, elapsed = exploit_run
    fields = dict(kv.split("=", 1) for kv in bench.split() if "=" in kv)
    samples = int(fields.get("samples", "0"))
    a = parse_sat_line(line)
    outcome = check_exploit(a) if a else None
    ok = bool(outcome and outcome.overflow) and 0 < samples <= 50000 and elapsed < 600
    record(7, ok, f"solve -> {'overflow at ptr=' + str(outcome.ptr) if outcome else line}, "
                  f"{samples} samples, {elapsed:.1f}s")


# -- 8: determinism --------------------------------------------------------------------------


def test_criterion_8_determinism(suite_run, exploit_run, tmp_path):
    again = run_suite(loop_suite(), TaskConfig())
    same_suite = suite_fingerprint(again) == suite_fingerprint(suite_run[0])
    _, line, _ = run_exploit_cli(tmp_path)
    same_exploit = line == exploit_run[1]
    record(8, same_suite and same_exploit,
           f"suite rerun {'identical' if same_suite else 'differs'}, "
           f"exploit rerun {'identical' if same_exploit else 'differs'}")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q"])
    print("\n".join(summary_lines()))
    sys.exit(code)
