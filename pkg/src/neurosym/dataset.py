"""Tabular execution samples: named numeric columns with a kind per column."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("int", "real")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, len(self.names))
        if rows.ndim != 2 or rows.shape[1] != len(self.names):
            raise DatasetError(
                f"rows have shape {rows.shape}, expected (n, {len(self.names)})"
            )
        if len(self.kinds) != len(self.names):
            raise DatasetError("one kind per column required")
        if len(set(self.names)) != len(self.names):
            raise DatasetError("duplicate column names")
        for k in self.kinds:
            if k not in KINDS:
                raise DatasetError(f"unknown column kind {k!r}")
        if not np.all(np.isfinite(rows)):
            raise DatasetError("dataset contains non-finite values")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.index(name)]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DatasetError(f"no column named {name!r}") from None

    def kind(self, name: str) -> str:
        return self.kinds[self.index(name)]

    def select(self, names) -> np.ndarray:
        return self.rows[:, [self.index(n) for n in names]]

    def take(self, idx) -> "Dataset":
        return Dataset(self.names, self.kinds, self.rows[np.asarray(idx, dtype=int)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{n}:{k}" for n, k in zip(self.names, self.kinds)])
        for row in self.rows:
            w.writerow(
                [str(int(v)) if k == "int" else repr(float(v)) for v, k in zip(row, self.kinds)]
            )
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty CSV") from None
        names, kinds = [], []
        for cell in header:
            name, sep, kind = cell.strip().partition(":")
            if not sep or not name:
                raise DatasetError(f"header cell {cell!r} is not name:kind")
            names.append(name)
            kinds.append(kind)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(names):
                raise DatasetError(f"line {lineno}: expected {len(names)} cells, got {len(rec)}")
            try:
                rows.append([float(c) for c in rec])
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
        arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
        return cls(tuple(names), tuple(kinds), arr)

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))
