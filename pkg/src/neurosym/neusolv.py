"""Gradient-guided search over loss functions.

One enumeration moves a single coordinate, the one with the steepest
partial derivative: integer coordinates step by one unit against the
derivative's sign, real coordinates by ``-lr * derivative``. Every
visited point is cached, and the acceptance predicate is consulted after
each move rather than waiting for a minimum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import numpy as np

DEFAULT_MAX_ENUM = 10_000


class Loss(Protocol):
    vars: tuple[str, ...]

    def value_and_grad(self, a: Mapping[str, float]) -> tuple[float, dict[str, float]]: ...


@dataclass
class SearchConfig:
    max_enumerations: int = DEFAULT_MAX_ENUM
    learning_rate: float = 0.1
    seed: int = 0
    per_var_domains: dict[str, tuple[float, float]] = field(default_factory=dict)
    integer_vars: frozenset[str] = frozenset()
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.max_enumerations < 1:
            raise ValueError("max_enumerations must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.integer_vars = frozenset(self.integer_vars)

    def domain(self, name: str) -> tuple[float, float]:
        return self.per_var_domains.get(name, (-math.inf, math.inf))


@dataclass
class Found:
    assignment: dict[str, float]
    enumerations: int
    trial: int = 0
    loss: float = math.nan

    @property
    def found(self) -> bool:
        return True


@dataclass
class Exhausted:
    best: dict[str, float]
    best_loss: float
    enumerations: int = 0
    reason: str = "budget"
    trials: int = 1

    @property
    def found(self) -> bool:
        return False


SearchOutcome = Found | Exhausted


def _typed(a: Mapping[str, float], ints) -> dict[str, float]:
    return {n: int(round(v)) if n in ints else float(v) for n, v in a.items()}


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def step(
    x: Mapping[str, float],
    grad: Mapping[str, float],
    order: tuple[str, ...],
    cfg: SearchConfig,
) -> tuple[dict[str, float], str | None]:
    """One single-variable update; returns the new point and the moved name.

    Coordinates pinned at a bound report zero derivative toward it.
    """
    best, best_g = None, 0.0
    for n in order:
        g = grad.get(n, 0.0)
        lo, hi = cfg.domain(n)
        if (g > 0 and x[n] <= lo) or (g < 0 and x[n] >= hi):
            g = 0.0
        if abs(g) > abs(best_g):
            best, best_g = n, g
    if best is None:
        return dict(x), None
    out = dict(x)
    lo, hi = cfg.domain(best)
    if best in cfg.integer_vars:
        out[best] = _clamp(x[best] - math.copysign(1.0, best_g), lo, hi)
    else:
        out[best] = _clamp(x[best] - cfg.learning_rate * best_g, lo, hi)
    return out, best


def search(
    lf: Loss,
    accept: Callable[[dict[str, float]], bool],
    cfg: SearchConfig,
    x0: Mapping[str, float],
    trial: int = 0,
) -> SearchOutcome:
    """Minimize ``lf`` from ``x0`` until ``accept`` holds or the budget ends."""
    order = tuple(lf.vars)
    x = {n: float(x0[n]) for n in order}
    for n in order:
        lo, hi = cfg.domain(n)
        if not lo <= x[n] <= hi:
            raise ValueError(f"initial value of {n!r} lies outside its domain")
    loss, grad = lf.value_and_grad(x)
    if not math.isfinite(loss):
        return Exhausted(_typed(x, cfg.integer_vars), math.inf, 0, "non-finite loss at start")
    best, best_loss = dict(x), loss
    seen = {tuple(x[n] for n in order)}
    for i in range(1, cfg.max_enumerations + 1):
        x, moved = step(x, grad, order, cfg)
        candidate = _typed(x, cfg.integer_vars)
        if accept(candidate):
            return Found(candidate, i, trial, lf.value_and_grad(x)[0])
        if moved is None:
            return Exhausted(_typed(best, cfg.integer_vars), best_loss, i, "zero gradient")
        key = tuple(x[n] for n in order)
        if key in seen:
            return Exhausted(_typed(best, cfg.integer_vars), best_loss, i, "revisited state")
        seen.add(key)
        loss, grad = lf.value_and_grad(x)
        if not math.isfinite(loss):
            return Exhausted(_typed(best, cfg.integer_vars), best_loss, i, "non-finite loss")
        if loss < best_loss:
            best, best_loss = dict(x), loss
    return Exhausted(_typed(best, cfg.integer_vars), best_loss, cfg.max_enumerations, "budget")


def trial_seed(seed: int, t: int) -> int:
    return seed ^ t


def initial_point(order, cfg: SearchConfig, seed: int) -> dict[str, float]:
    """Uniform draw over the domains; unbounded sides are capped at 1e6."""
    rng = np.random.default_rng(seed)
    out = {}
    for n in order:
        lo, hi = cfg.domain(n)
        lo, hi = max(lo, -1e6), min(hi, 1e6)
        if n in cfg.integer_vars:
            out[n] = float(rng.integers(math.ceil(lo), math.floor(hi) + 1))
        else:
            out[n] = float(rng.uniform(lo, hi))
    return out


def _one_trial(lf, accept, cfg, t):
    x0 = initial_point(tuple(lf.vars), cfg, trial_seed(cfg.seed, t))
    out = search(lf, accept, cfg, x0, trial=t)
    if isinstance(out, Found):
        assert accept(out.assignment), "search returned an unaccepted point"
    return out


def search_multi(
    lf: Loss,
    accept: Callable[[dict[str, float]], bool],
    cfg: SearchConfig,
    trials: int,
) -> SearchOutcome:
    """Independent seeded trials; the lowest-index success wins.

    Trial ``t`` starts from a point drawn with seed ``cfg.seed ^ t``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if cfg.jobs > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(lambda t: _one_trial(lf, accept, cfg, t), range(trials)))
    else:
        outcomes = []
        for t in range(trials):
            outcomes.append(_one_trial(lf, accept, cfg, t))
            if isinstance(outcomes[-1], Found):
                break
    for out in outcomes:
        if isinstance(out, Found):
            return out
    best = min(outcomes, key=lambda o: o.best_loss)
    return Exhausted(best.best, best.best_loss, sum(o.enumerations for o in outcomes),
                     best.reason, trials=len(outcomes))
