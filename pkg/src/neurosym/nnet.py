"""Feed-forward ReLU networks used as neural constraints.

Inputs and outputs are standardized with training-set statistics; the
stored model maps raw input values to raw output values, so callers never
see the standardized space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

FORMAT_HEADER = "nsxmodel v1"


class ModelError(ValueError):
    """Raised for malformed, truncated or inconsistent model files."""


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (64, 64)
    batch_size: int = 128
    learning_rate: float = 3e-3
    max_epochs: int = 1000
    patience: int = 50
    optimizer: str = "adam"
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if any(h <= 0 for h in self.hidden):
            raise ValueError("hidden layer widths must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")


@dataclass
class TrainReport:
    epochs_run: int
    train_loss: float
    val_curve: list[float]
    accuracy: float
    stopped_early: bool
    best_epoch: int = 0


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray
    output_kinds: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.output_kinds:
            self.output_kinds = ("real",) * len(self.output_names)
        self.input_names = tuple(self.input_names)
        self.output_names = tuple(self.output_names)
        self.output_kinds = tuple(self.output_kinds)
        self.validate()

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def validate(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ModelError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ModelError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ModelError(f"layer {i}: input width {w.shape[1]} does not chain")
        n_in, n_out = self.weights[0].shape[1], self.weights[-1].shape[0]
        if len(self.input_names) != n_in or len(self.output_names) != n_out:
            raise ModelError("name lists do not match network input/output widths")
        if set(self.input_names) & set(self.output_names):
            raise ModelError("input and output names overlap")
        if len(self.output_kinds) != n_out:
            raise ModelError("one kind per output required")
        for arr, n in ((self.input_mean, n_in), (self.input_std, n_in),
                       (self.output_mean, n_out), (self.output_std, n_out)):
            if np.shape(arr) != (n,):
                raise ModelError("standardization statistics have the wrong shape")
        if np.any(self.input_std <= 0) or np.any(self.output_std <= 0):
            raise ModelError("standard deviations must be positive")

    # -- evaluation -------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Raw inputs (n, d_in) or (d_in,) to raw outputs."""
        z = (np.asarray(x, dtype=float) - self.input_mean) / self.input_std
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = z @ w.T + b
            if i < last:
                z = np.maximum(z, 0.0)
        return z * self.output_std + self.output_mean

    def value_and_input_grad(self, x: np.ndarray, downstream: np.ndarray):
        """Outputs at one raw input point and d(downstream . outputs)/d inputs."""
        z = (np.asarray(x, dtype=float) - self.input_mean) / self.input_std
        pre = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ z + b
            if i < last:
                pre.append(z)
                z = np.maximum(z, 0.0)
        out = z * self.output_std + self.output_mean
        g = np.asarray(downstream, dtype=float) * self.output_std
        for i in range(last, -1, -1):
            g = self.weights[i].T @ g
            if i > 0:
                # subgradient 0 at a pre-activation of exactly 0
                g = g * (pre[i - 1] > 0.0)
        return out, g / self.input_std


def _as_vector(m: MlpModel, a: Mapping[str, float]) -> np.ndarray:
    missing = [n for n in m.input_names if n not in a]
    if missing:
        raise KeyError(f"missing input binding(s): {', '.join(missing)}")
    return np.array([float(a[n]) for n in m.input_names])


def predict(m: MlpModel, a: Mapping[str, float]) -> dict[str, float]:
    y = m.forward(_as_vector(m, a))
    return {n: float(v) for n, v in zip(m.output_names, y)}


def input_gradient(m: MlpModel, a: Mapping[str, float], downstream: Sequence[float]) -> dict[str, float]:
    downstream = np.asarray(downstream, dtype=float)
    if downstream.shape != (len(m.output_names),):
        raise ValueError(f"downstream must have {len(m.output_names)} entries")
    _, g = m.value_and_input_grad(_as_vector(m, a), downstream)
    return {n: float(v) for n, v in zip(m.input_names, g)}


# -- training -------------------------------------------------------------


def _stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _init_params(sizes: list[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _batch_loss_grads(weights, biases, x, y):
    acts = [x]
    z = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = z @ w.T + b
        if i < last:
            z = np.maximum(z, 0.0)
        acts.append(z)
    err = acts[-1] - y
    n = x.shape[0]
    loss = float(np.mean(err ** 2))
    g = 2.0 * err / (n * y.shape[1])
    gw, gb = [None] * len(weights), [None] * len(weights)
    for i in range(last, -1, -1):
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i]) * (acts[i] > 0.0)
    return loss, gw, gb


def _mse(weights, biases, x, y) -> float:
    z = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = z @ w.T + b
        if i < last:
            z = np.maximum(z, 0.0)
    return float(np.mean((z - y) ** 2))


def train(
    data: Dataset,
    inputs: Sequence[str],
    outputs: Sequence[str],
    cfg: TrainConfig | None = None,
    validation: Dataset | None = None,
) -> tuple[MlpModel, TrainReport]:
    """Fit an MLP mapping ``inputs`` to ``outputs`` by minimizing MSE.

    If ``validation`` is None a seeded ``cfg.validation_fraction`` of the rows
    is held out. Early stopping watches the validation loss and the returned
    model is the best-validation snapshot; accuracy is reported on the
    held-out rows only.
    """
    cfg = cfg or TrainConfig()
    inputs, outputs = list(inputs), list(outputs)
    if not inputs or not outputs:
        raise ValueError("need at least one input and one output column")
    if set(inputs) & set(outputs):
        raise ValueError("input and output columns overlap")
    if len(data) < 10:
        raise ValueError("need at least 10 rows to train")
    rng = np.random.default_rng(cfg.seed)

    if validation is None:
        perm = rng.permutation(len(data))
        n_val = max(1, int(round(len(data) * cfg.validation_fraction)))
        validation = data.take(perm[:n_val])
        data = data.take(perm[n_val:])

    x_raw, y_raw = data.select(inputs), data.select(outputs)
    in_mean, in_std = _stats(x_raw)
    out_mean, out_std = _stats(y_raw)
    x = (x_raw - in_mean) / in_std
    y = (y_raw - out_mean) / out_std
    xv = (validation.select(inputs) - in_mean) / in_std
    yv = (validation.select(outputs) - out_mean) / out_std

    sizes = [len(inputs), *cfg.hidden, len(outputs)]
    weights, biases = _init_params(sizes, rng)
    adam = None
    if cfg.optimizer == "adam":
        adam = ([np.zeros_like(w) for w in weights], [np.zeros_like(w) for w in weights],
                [np.zeros_like(b) for b in biases], [np.zeros_like(b) for b in biases])
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0

    best = (math.inf, [w.copy() for w in weights], [b.copy() for b in biases], 0)
    val_curve: list[float] = []
    since_best = 0
    stopped_early = False
    train_loss = math.nan
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = _batch_loss_grads(weights, biases, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            losses.append(loss * len(idx))
            step += 1
            if adam is None:
                for i in range(len(weights)):
                    weights[i] -= cfg.learning_rate * gw[i]
                    biases[i] -= cfg.learning_rate * gb[i]
            else:
                mw, vw, mb, vb = adam
                c1, c2 = 1 - b1 ** step, 1 - b2 ** step
                for i in range(len(weights)):
                    mw[i] = b1 * mw[i] + (1 - b1) * gw[i]
                    vw[i] = b2 * vw[i] + (1 - b2) * gw[i] ** 2
                    mb[i] = b1 * mb[i] + (1 - b1) * gb[i]
                    vb[i] = b2 * vb[i] + (1 - b2) * gb[i] ** 2
                    weights[i] -= cfg.learning_rate * (mw[i] / c1) / (np.sqrt(vw[i] / c2) + eps)
                    biases[i] -= cfg.learning_rate * (mb[i] / c1) / (np.sqrt(vb[i] / c2) + eps)
        train_loss = sum(losses) / len(x)
        val = _mse(weights, biases, xv, yv)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        val_curve.append(val)
        if val < best[0]:
            best = (val, [w.copy() for w in weights], [b.copy() for b in biases], epoch)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stopped_early = True
                break

    model = MlpModel(
        weights=best[1], biases=best[2],
        input_names=tuple(inputs), output_names=tuple(outputs),
        input_mean=in_mean, input_std=in_std, output_mean=out_mean, output_std=out_std,
        output_kinds=tuple(data.kind(n) for n in outputs),
    )
    report = TrainReport(
        epochs_run=epoch, train_loss=train_loss, val_curve=val_curve,
        accuracy=accuracy(model, validation), stopped_early=stopped_early, best_epoch=best[3],
    )
    log.info("trained %s -> %s: %d epochs, acc=%.3f", inputs, outputs, epoch, report.accuracy)
    return model, report


def output_matches(kind: str, predicted, expected, rel_tol: float = 1e-2):
    """Rounding rule shared by accuracy and neural-constraint satisfaction."""
    predicted = np.asarray(predicted, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if kind == "int":
        return np.rint(predicted) == np.rint(expected)
    return np.abs(predicted - expected) <= rel_tol * np.maximum(np.abs(expected), 1e-12)


def accuracy(m: MlpModel, held_out: Dataset) -> float:
    """M_R / M over held-out rows; a row is right iff every output matches."""
    if len(held_out) == 0:
        raise ValueError("accuracy of an empty held-out set is undefined")
    pred = m.forward(held_out.select(m.input_names))
    truth = held_out.select(m.output_names)
    ok = np.ones(len(held_out), dtype=bool)
    for j, name in enumerate(m.output_names):
        ok &= output_matches(held_out.kind(name), pred[:, j], truth[:, j])
    return float(ok.sum()) / len(held_out)


def explain(m: MlpModel) -> list[tuple[str, float]]:
    """Rank inputs by total absolute path weight to the outputs."""
    prod = np.abs(m.weights[0])
    for w in m.weights[1:]:
        prod = np.abs(w) @ prod
    scores = prod.sum(axis=0)
    ranked = sorted(zip(m.input_names, scores.tolist()), key=lambda t: (-t[1], m.input_names.index(t[0])))
    return [(n, float(s)) for n, s in ranked]


# -- persistence ----------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dumps(m: MlpModel) -> str:
    lines = [
        FORMAT_HEADER,
        "layers " + " ".join(str(s) for s in m.layer_sizes),
        "inputs " + " ".join(m.input_names),
        "outputs " + " ".join(f"{n}:{k}" for n, k in zip(m.output_names, m.output_kinds)),
        "input_mean " + _fmt(m.input_mean),
        "input_std " + _fmt(m.input_std),
        "output_mean " + _fmt(m.output_mean),
        "output_std " + _fmt(m.output_std),
    ]
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        lines.append(f"weight {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt(row) for row in w)
        lines.append(f"bias {i} {b.shape[0]}")
        lines.append(_fmt(b))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save(m: MlpModel, path) -> None:
    Path(path).write_text(dumps(m), encoding="utf-8")


def _floats(line: str, n: int, what: str) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in line.split()], dtype=float)
    except ValueError:
        raise ModelError(f"non-numeric data in {what}") from None
    if vals.shape != (n,):
        raise ModelError(f"{what}: expected {n} values, found {vals.size}")
    return vals


def loads(text: str) -> MlpModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        head = lines[0].strip() if lines else ""
        if head.startswith("nsxmodel"):
            raise ModelError(f"unsupported model version {head!r}")
        raise ModelError("not a model file (missing header)")
    pos = 1

    def take(prefix: str) -> list[str]:
        nonlocal pos
        if pos >= len(lines):
            raise ModelError(f"truncated model file (expected {prefix!r})")
        parts = lines[pos].split()
        pos += 1
        if not parts or parts[0] != prefix:
            raise ModelError(f"expected {prefix!r} at line {pos}")
        return parts[1:]

    try:
        sizes = [int(s) for s in take("layers")]
    except ValueError:
        raise ModelError("malformed layer sizes") from None
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ModelError("malformed layer sizes")
    input_names = tuple(take("inputs"))
    out_cells = take("outputs")
    output_names = tuple(c.partition(":")[0] for c in out_cells)
    output_kinds = tuple(c.partition(":")[2] or "real" for c in out_cells)
    if len(input_names) != sizes[0] or len(output_names) != sizes[-1]:
        raise ModelError("declared names do not match declared layer sizes")
    stats = {}
    for key, n in (("input_mean", sizes[0]), ("input_std", sizes[0]),
                   ("output_mean", sizes[-1]), ("output_std", sizes[-1])):
        stats[key] = _floats(" ".join(take(key)), n, key)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        hdr = take("weight")
        if hdr != [str(i), str(fan_out), str(fan_in)]:
            raise ModelError(f"weight block {i} shape {hdr[1:]} does not match layers {fan_out}x{fan_in}")
        rows = []
        for r in range(fan_out):
            if pos >= len(lines):
                raise ModelError("truncated model file (weight block)")
            rows.append(_floats(lines[pos], fan_in, f"weight {i} row {r}"))
            pos += 1
        weights.append(np.vstack(rows))
        hdr = take("bias")
        if hdr != [str(i), str(fan_out)]:
            raise ModelError(f"bias block {i} shape does not match layers")
        if pos >= len(lines):
            raise ModelError("truncated model file (bias block)")
        biases.append(_floats(lines[pos], fan_out, f"bias {i}"))
        pos += 1
    take("end")
    return MlpModel(weights, biases, input_names, output_names, output_kinds=output_kinds, **stats)


def load(path) -> MlpModel:
    return loads(Path(path).read_text(encoding="utf-8"))
