from __future__ import annotations

import numpy as np
import pytest

from neurosym import nnet
from neurosym.lang import ConstraintFile, NeuralDecl, parse, parse_constraint
from neurosym.mixed_solver import (
    Component, MixedConfig, MixedSolverError, Stats, _Context, build_graph, mixed_solve_I,
    mixed_solve_II, solve, verify,
)


def linear(inputs, output, coef, bias=0.0, kind="int") -> nnet.MlpModel:
    """``output = coef . inputs + bias`` as a one-layer network."""
    n = len(inputs)
    return nnet.MlpModel([np.array([coef], dtype=float)], [np.array([bias])], tuple(inputs), (output,),
                         np.zeros(n), np.ones(n), np.zeros(1), np.ones(1), (kind,))


IDENTITY = {"id.nsx": linear(["x"], "y", [1.0])}


# -- graph --------------------------------------------------------------------------


def test_three_component_classes():
    cf = parse("""
        int V1; int V2; int V3; int V4; int V5; int V6; int V7; int V8; int V9;
        assert V1 < V2;
        assert V5 != V6;
        assert V8 > V9;
        neural "n1.nsx" (V3) -> (V4);
        neural "n2.nsx" (V6, V7) -> (V8);
    """)
    g = build_graph(cf)
    kinds = sorted(c.kind for c in g.components)
    assert kinds == ["Mixed", "PureNeural", "PureSymbolic"]
    mixed = next(c for c in g.components if c.kind == "Mixed")
    assert mixed.variables == ["V5", "V6", "V7", "V8", "V9"]
    assert len(mixed.symbolic) == 2 and len(mixed.neural) == 1


def test_single_atom_and_disconnected_atoms():
    assert [c.kind for c in build_graph(parse("int a; assert a > 1;")).components] == ["PureSymbolic"]
    g = build_graph(parse("int a; int b; assert a > 1; assert b < 2;"))
    assert len(g.components) == 2


def test_top_level_conjuncts_are_separate_nodes():
    g = build_graph(parse("int a; int b; assert a > 1 && b < 2;"))
    assert len(g.components) == 2


def test_components_are_variable_disjoint():
    cf = parse("""
        int a; int b; int c; int d; int e;
        assert a < b || c > 1; assert d == e; assert e != 3;
        neural "m.nsx" (a) -> (d);
    """)
    comps = build_graph(cf).components
    seen = set()
    for c in comps:
        assert not seen & set(c.variables)
        seen |= set(c.variables)


# -- driver ---------------------------------------------------------------------------


def test_pure_symbolic():
    res = solve(parse("int x in -10..10; assert x > 3 && x < 5;"))
    assert res.verdict == "SAT" and res.assignment == {"x": 4}


def test_early_unsat_never_touches_models():
    cf = parse("""
        int ptr in 0..200; int x in 0..10; int y in 0..10;
        assert ptr > 99; assert ptr < 50;
        assert y > 2;
        neural "id.nsx" (x) -> (y);
    """)
    res = solve(cf, IDENTITY)
    assert res.verdict == "UNSAT"
    assert res.stats.model_evals == 0


def test_pure_neural_forward_evaluation():
    cf = parse('int x in 0..10; int y in 0..10; neural "id.nsx" (x) -> (y);')
    res = solve(cf, IDENTITY, MixedConfig(seed=5))
    assert res.verdict == "SAT" and res.assignment["x"] == res.assignment["y"]


def test_mixed_linear_overflow():
    cf = parse("""
        int u in 0..128; int v in 0..128; int p in 0..300;
        assert p > 99;
        neural "lin.nsx" (u, v) -> (p);
    """)
    models = {"lin.nsx": linear(["u", "v"], "p", [1.0, 1.0], 1.0)}
    res = solve(cf, models)
    assert res.verdict == "SAT"
    a = res.assignment
    assert a["u"] + a["v"] + 1 == a["p"] > 99
    assert verify(cf, models, a) == []


def test_unknown_and_compat_flag():
    cf = parse("""
        int x in 0..5; int y in 0..100;
        assert y > 50;
        neural "id.nsx" (x) -> (y);
    """)
    res = solve(cf, IDENTITY, MixedConfig(max_trial1=2, max_enumerations=50, mixed2_trials=2))
    assert res.verdict == "UNKNOWN"
    assert "mixed1" in res.diagnostics and "mixed2" in res.diagnostics
    assert "mixed2" in res.stats.best_losses
    compat = solve(cf, IDENTITY, MixedConfig(max_trial1=2, max_enumerations=50, mixed2_trials=2,
                                             compat_unsat=True))
    assert compat.verdict == "UNSAT" and compat.diagnostics["collapsed_from"] == "UNKNOWN"


def test_component_order_does_not_change_verdict():
    text = """
        int a in 0..9; int b in 0..9; int x in 0..20; int y in 0..20;
        {0}
        {1}
        neural "id.nsx" (x) -> (y);
    """
    parts = ["assert a + b == 7 && a > b;", "assert y >= 12;"]
    r1 = solve(parse(text.format(*parts)), IDENTITY)
    r2 = solve(parse(text.format(*reversed(parts))), IDENTITY)
    assert r1.verdict == r2.verdict == "SAT"
    assert r1.assignment == r2.assignment


def test_missing_model_is_an_error():
    cf = parse('int x; int y; neural "nope.nsx" (x) -> (y);')
    with pytest.raises(MixedSolverError):
        solve(cf, {})


def test_arity_mismatch_is_an_error():
    cf = parse('int x; int z; int y; neural "id.nsx" (x, z) -> (y);')
    with pytest.raises(MixedSolverError):
        solve(cf, IDENTITY)


def test_verify_reports_problems():
    cf = parse('int x in 0..9; int y in 0..9; assert y > 3; neural "id.nsx" (x) -> (y);')
    assert verify(cf, IDENTITY, {"x": 5, "y": 5}) == []
    assert verify(cf, IDENTITY, {"x": 4, "y": 5})
    assert verify(cf, IDENTITY, {"x": 2, "y": 2})


def test_report_lines():
    res = solve(parse("int x in 0..9; assert x == 3;"))
    lines = res.report().splitlines()
    assert lines[0] == "verdict=SAT"
    assert "value.x=3" in lines


# -- mixed I ---------------------------------------------------------------------------


def _ctx(cf, models, cfg=None):
    return _Context(cf, models, cfg or MixedConfig(), Stats())


def _component(cf):
    return next(c for c in build_graph(cf).components if c.kind == "Mixed")


CONTRIVED = """
    int x in 5..20; int y in 0..{hi};
    assert y >= 0;
    neural "id.nsx" (x) -> (y);
"""


def test_conflict_clauses_after_five_rejections():
    cf = parse(CONTRIVED.format(hi=20))
    ctx = _ctx(cf, IDENTITY)
    conflicts = []
    res = mixed_solve_I(ctx, _component(cf), conflicts, seed=0)
    assert res.verdict == "SAT" and res.assignment["y"] == res.assignment["x"] == 5
    picks = ctx.stats.proposals
    assert [p["y"] for p in picks] == [0, 1, 2, 3, 4, 5]
    assert len(conflicts) == 5
    assert [c.disjuncts for c in conflicts] == [(("y", k),) for k in range(5)]
    assert len({tuple(sorted(p.items())) for p in picks}) == len(picks)


def test_mixed1_terminates_within_budget():
    cf = parse(CONTRIVED.format(hi=1000).replace("5..20", "900..950"))
    ctx = _ctx(cf, IDENTITY, MixedConfig(max_trial1=1, max_enumerations=20))
    res = mixed_solve_I(ctx, _component(cf), [], seed=0)
    assert res.verdict == "UNKNOWN"
    assert ctx.stats.mixed1_iterations == 100


def test_exhausted_symbolic_space_is_not_unsat():
    cf = parse(CONTRIVED.format(hi=3))
    ctx = _ctx(cf, IDENTITY)
    res = mixed_solve_I(ctx, _component(cf), [], seed=0)
    assert res.verdict == "UNKNOWN"
    assert len(ctx.stats.conflicts) == 4


def test_fully_assigned_neural_constraint():
    cf = parse('int x in 0..9; int y in 0..9; assert x == 4 && y == 4; neural "id.nsx" (x) -> (y);')
    ctx = _ctx(cf, IDENTITY)
    res = mixed_solve_I(ctx, _component(cf), [], seed=0)
    assert res.verdict == "SAT" and ctx.stats.mixed1_searches == 0


# -- mixed II --------------------------------------------------------------------------


def test_always_true_component_found_at_first_enumeration():
    cf = parse('int x in 0..9; int y in 0..9; neural "id.nsx" (x) -> (y);')
    comp = Component([parse_constraint("0 <= 1", {})], list(cf.neural), ["x", "y"])
    ctx = _ctx(cf, IDENTITY)
    res = mixed_solve_II(ctx, comp, seed=0)
    assert res.verdict == "SAT"
    assert res.diagnostics["mixed2"] == "trial 1, enumeration 1"
    assert ctx.stats.mixed2_trials == 1


def test_mixed2_follows_gradient_through_network():
    cf = parse("""
        int u in 0..128; int v in 0..128; int p in 0..300;
        assert p > 99;
        neural "lin.nsx" (u, v) -> (p);
    """)
    models = {"lin.nsx": linear(["u", "v"], "p", [1.0, 1.0], 1.0)}
    res = solve(cf, models, MixedConfig(use_mixed1=False))
    assert res.verdict == "SAT" and res.stats.stage == "mixed2"
    assert res.stats.mixed2_trials <= 10


def test_mixed2_materializes_strings():
    cf = parse("""
        str s maxlen 40; int n in 0..40; int p in 0..100;
        assert n == strlen(s); assert p > 30;
        neural "dbl.nsx" (n) -> (p);
    """)
    models = {"dbl.nsx": linear(["n"], "p", [2.0])}
    res = solve(cf, models, MixedConfig(use_mixed1=False))
    assert res.verdict == "SAT"
    a = res.assignment
    assert len(a["s"]) == a["n"] and a["p"] == 2 * a["n"] > 30


def test_cyclic_networks_are_unknown():
    cf = parse("""
        int a in 0..9; int b in 0..9;
        assert a > 2;
        neural "ab.nsx" (a) -> (b);
        neural "ba.nsx" (b) -> (a);
    """)
    models = {"ab.nsx": linear(["a"], "b", [1.0]), "ba.nsx": linear(["b"], "a", [1.0])}
    assert solve(cf, models).verdict == "UNKNOWN"


def test_chained_networks():
    cf = parse("""
        int a in 0..20; int b in 0..40; int c in 0..80;
        assert c == 44;
        neural "ab.nsx" (a) -> (b);
        neural "bc.nsx" (b) -> (c);
    """)
    models = {"ab.nsx": linear(["a"], "b", [2.0]), "bc.nsx": linear(["b"], "c", [2.0])}
    res = solve(cf, models)
    assert res.verdict == "SAT" and res.assignment["a"] == 11


def test_solve_is_deterministic():
    cf = parse("""
        int u in 0..128; int v in 0..128; int p in 0..300;
        assert p > 99 && u > v;
        neural "lin.nsx" (u, v) -> (p);
    """)
    models = {"lin.nsx": linear(["u", "v"], "p", [1.0, 1.0], 1.0)}
    a = solve(cf, models, MixedConfig(seed=3))
    b = solve(cf, models, MixedConfig(seed=3))
    assert a.assignment == b.assignment and a.stats.stage == b.stats.stage


def test_constraint_file_accepts_lists():
    cf = ConstraintFile([], [], [NeuralDecl("m", ["a"], ["b"])])
    assert isinstance(cf.neural, tuple) and cf.neural[0].inputs == ("a",)
