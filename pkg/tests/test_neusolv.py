from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import pytest

from neurosym.lang import eval_constraint, parse_constraint
from neurosym.loss_encode import encode
from neurosym.neusolv import (
    Exhausted, Found, SearchConfig, initial_point, search, search_multi, step, trial_seed,
)


@dataclass
class Scalar:
    """Loss over one real variable ``x`` given value and derivative functions."""

    f: Callable[[float], float]
    df: Callable[[float], float]
    vars: tuple[str, ...] = ("x",)

    def value_and_grad(self, a):
        return self.f(a["x"]), {"x": self.df(a["x"])}


QUAD = Scalar(lambda x: (x - 3) ** 2, lambda x: 2 * (x - 3))


def bimodal():
    def f(x):
        return min((x + 5) ** 2, (x - 5) ** 2) + 1

    def df(x):
        return 2 * (x + 5) if (x + 5) ** 2 < (x - 5) ** 2 else 2 * (x - 5)

    return Scalar(f, df)


def test_quadratic_converges():
    out = search(QUAD, lambda a: abs(a["x"] - 3) < 0.01, SearchConfig(), {"x": 0.0})
    assert isinstance(out, Found)
    # |x_k - 3| = 3 * 0.8^k
    assert out.enumerations == math.ceil(math.log(0.01 / 3) / math.log(0.8))


def test_single_step_arithmetic():
    x, moved = step({"x": 1.0}, {"x": 2.0}, ("x",), SearchConfig())
    assert moved == "x" and x["x"] == pytest.approx(0.8)


def test_accept_true_found_immediately():
    flat = Scalar(lambda x: 0.0, lambda x: 0.0)
    out = search(flat, lambda a: True, SearchConfig(), {"x": 7.0})
    assert isinstance(out, Found) and out.enumerations == 1


def test_single_variable_update_and_ties():
    cfg = SearchConfig(integer_vars={"a", "b", "c"})
    x, moved = step({"a": 0, "b": 0, "c": 0}, {"a": 1.0, "b": -3.0, "c": 3.0}, ("a", "b", "c"), cfg)
    assert moved == "b" and x == {"a": 0, "b": 1, "c": 0}


def test_integer_moves_by_one():
    cfg = SearchConfig(integer_vars={"a"})
    x, _ = step({"a": 5.0}, {"a": 123.4}, ("a",), cfg)
    assert x["a"] == 4.0


def test_domain_clamp_and_pinned_coordinate():
    cfg = SearchConfig(per_var_domains={"x": (0.0, 1.0)})
    x, _ = step({"x": 0.05}, {"x": 10.0}, ("x",), cfg)
    assert x["x"] == 0.0
    # pinned at the lower bound, the gradient pushing further down counts as zero
    x, moved = step({"x": 0.0}, {"x": 10.0}, ("x",), cfg)
    assert moved is None


def test_zero_gradient_stall_is_exhausted():
    flat = Scalar(lambda x: 1.0, lambda x: 0.0)
    out = search(flat, lambda a: False, SearchConfig(), {"x": 0.0})
    assert isinstance(out, Exhausted) and out.reason == "zero gradient"


def test_revisit_ends_trial():
    # the integer walk oscillates between two points with non-zero gradient
    osc = Scalar(lambda x: abs(x - 0.5), lambda x: 1.0 if x > 0.5 else -1.0)
    cfg = SearchConfig(integer_vars={"x"})
    out = search(osc, lambda a: False, cfg, {"x": 0.0})
    assert isinstance(out, Exhausted) and out.reason == "revisited state"


def test_budget_and_best_loss():
    slow = Scalar(lambda x: -x, lambda x: -1.0)
    cfg = SearchConfig(max_enumerations=50)
    out = search(slow, lambda a: False, cfg, {"x": 0.0})
    assert isinstance(out, Exhausted) and out.enumerations == 50
    assert out.best_loss == pytest.approx(-0.1 * 50)


def test_non_finite_start():
    bad = Scalar(lambda x: math.inf, lambda x: 0.0)
    out = search(bad, lambda a: True, SearchConfig(), {"x": 0.0})
    assert isinstance(out, Exhausted) and out.enumerations == 0


def test_start_outside_domain_rejected():
    with pytest.raises(ValueError):
        search(QUAD, lambda a: True, SearchConfig(per_var_domains={"x": (0, 1)}), {"x": 5.0})


def test_multimodal_restarts_find_positive_basin():
    cfg = SearchConfig(per_var_domains={"x": (-10.0, 10.0)}, seed=1)
    out = search_multi(bimodal(), lambda a: abs(a["x"] - 5) < 0.01, cfg, trials=10)
    assert isinstance(out, Found)
    start = initial_point(("x",), cfg, trial_seed(cfg.seed, out.trial))["x"]
    assert start > 0
    for t in range(out.trial):
        assert initial_point(("x",), cfg, trial_seed(cfg.seed, t))["x"] <= 0


def test_one_trial_equals_search():
    cfg = SearchConfig(per_var_domains={"x": (-10.0, 10.0)}, seed=4)
    accept = lambda a: abs(a["x"] - 3) < 0.01  # noqa: E731
    multi = search_multi(QUAD, accept, cfg, trials=1)
    single = search(QUAD, accept, cfg, initial_point(("x",), cfg, trial_seed(4, 0)))
    assert multi == single


def test_deterministic_and_parallel_agree():
    cfg = SearchConfig(per_var_domains={"x": (-10.0, 10.0)}, seed=3)
    accept = lambda a: abs(a["x"] - 5) < 0.01  # noqa: E731
    a = search_multi(bimodal(), accept, cfg, trials=8)
    b = search_multi(bimodal(), accept, cfg, trials=8)
    par = SearchConfig(per_var_domains={"x": (-10.0, 10.0)}, seed=3, jobs=4)
    c = search_multi(bimodal(), accept, par, trials=8)
    assert a == b
    assert a.assignment == c.assignment and a.trial == c.trial


def test_encoded_integer_constraint():
    lf = encode(parse_constraint("x + y == 7 && x > y", {"x": "int", "y": "int"}))
    c = parse_constraint("x + y == 7 && x > y", {"x": "int", "y": "int"})
    cfg = SearchConfig(integer_vars={"x", "y"}, per_var_domains={"x": (-20, 20), "y": (-20, 20)})
    out = search_multi(lf, lambda a: eval_constraint(c, a), cfg, trials=5)
    assert isinstance(out, Found)
    assert out.assignment["x"] + out.assignment["y"] == 7
