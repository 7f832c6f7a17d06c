"""Prior draw datasets and their CSV representation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class PriorDataset:
    """Prior draws over a fixed grid, one row per draw, paired with condition vectors.

    conditions has shape (count, k); k == 0 for unconditional data.
    draws has shape (count, n).
    """

    conditions: np.ndarray
    draws: np.ndarray

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        cond = np.asarray(self.conditions, dtype=float)
        if cond.ndim == 1:
            cond = cond.reshape(len(self.draws), -1)
        self.conditions = cond
        if self.conditions.shape[0] != self.draws.shape[0]:
            raise ValueError(
                f"{self.conditions.shape[0]} condition rows but {self.draws.shape[0]} draws"
            )

    @property
    def count(self) -> int:
        return self.draws.shape[0]

    @property
    def n(self) -> int:
        return self.draws.shape[1]

    @property
    def k(self) -> int:
        return self.conditions.shape[1]

    def __len__(self):
        return self.count

    def subset(self, index) -> "PriorDataset":
        return PriorDataset(self.conditions[index], self.draws[index])

    def split(self, n_first: int) -> tuple["PriorDataset", "PriorDataset"]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))

    def without_conditions(self) -> "PriorDataset":
        return PriorDataset(np.zeros((self.count, 0)), self.draws)

    @classmethod
    def concat(cls, parts) -> "PriorDataset":
        parts = list(parts)
        return cls(
            np.concatenate([p.conditions for p in parts]),
            np.concatenate([p.draws for p in parts]),
        )


def header(k: int, n: int) -> list[str]:
    return [f"c_{i}" for i in range(k)] + [f"f_{i}" for i in range(n)]


def write_dataset(dataset: PriorDataset, path) -> None:
    """Write with shortest round-trip decimals (Python ``repr``)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header(dataset.k, dataset.n))
        rows = np.hstack([dataset.conditions, dataset.draws])
        for row in rows.tolist():
            writer.writerow([repr(v) for v in row])


def read_dataset(path) -> PriorDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a c_*/f_* header") from None
        k = sum(1 for h in head if h.startswith("c_"))
        n = sum(1 for h in head if h.startswith("f_"))
        if k + n != len(head) or head != header(k, n):
            raise ValueError(f"{path}: malformed header {head[:4]}...")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + n:
                raise ValueError(f"{path}:{lineno}: expected {k + n} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    values = np.array(rows, dtype=float).reshape(-1, k + n)
    return PriorDataset(values[:, :k], values[:, k:])
