"""Censored observations with a discrete treatment and a discrete instrument.

Treatment and instrument levels are stored as 0-based integer indices.  The
treatment codebook maps each level to its dummy vector; the design matrix
used by the Cox fits is ``V = (z dummies, x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import SchemaError


class Observation(NamedTuple):
    y: float
    delta: int
    z_index: int
    x: float
    w_index: int


def default_codebook(levels: int) -> np.ndarray:
    """Reference coding: level 0 is all zeros, level ``l`` is the unit vector ``e_l``."""
    book = np.zeros((levels, max(levels - 1, 1)))
    for level in range(1, levels):
        book[level, level - 1] = 1.0
    return book


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    delta: np.ndarray
    z: np.ndarray
    x: np.ndarray
    w: np.ndarray
    z_codebook: np.ndarray = None
    z_labels: tuple = None
    w_labels: tuple = None
    source: str = field(default="memory")

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        delta = np.asarray(self.delta).astype(np.int8)
        z = np.asarray(self.z).astype(np.int64)
        x = np.asarray(self.x, dtype=float)
        w = np.asarray(self.w).astype(np.int64)
        n = y.size
        if n < 1:
            raise SchemaError("dataset has no observations")
        if not all(a.shape == (n,) for a in (delta, z, x, w)):
            raise SchemaError("columns must be one-dimensional and of equal length")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise SchemaError("durations must be finite and non-negative")
        if not np.all(np.isfinite(x)):
            raise SchemaError("covariate must be finite")
        if np.any((delta != 0) & (delta != 1)):
            raise SchemaError("event indicator must be 0 or 1")
        book = self.z_codebook
        if book is None:
            book = default_codebook(int(max(z.max(), w.max())) + 1)
        book = np.atleast_2d(np.asarray(book, dtype=float))
        levels = book.shape[0]
        if z.min() < 0 or z.max() >= levels:
            raise SchemaError(f"treatment index outside 0..{levels - 1}")
        if w.min() < 0 or w.max() >= levels:
            raise SchemaError(
                f"instrument index outside 0..{levels - 1}; treatment and instrument "
                "must have the same number of levels")
        if np.unique(book, axis=0).shape[0] != levels:
            raise SchemaError("treatment dummy vectors must be distinct")
        z_labels = self.z_labels or tuple(str(i) for i in range(levels))
        w_labels = self.w_labels or tuple(str(i) for i in range(levels))
        for name, val in (("y", y), ("delta", delta), ("z", z), ("x", x), ("w", w),
                          ("z_codebook", book), ("z_labels", tuple(z_labels)),
                          ("w_labels", tuple(w_labels))):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def levels(self) -> int:
        return self.z_codebook.shape[0]

    @property
    def d_z(self) -> int:
        return self.z_codebook.shape[1]

    def design_matrix(self) -> np.ndarray:
        return np.column_stack([self.z_codebook[self.z], self.x])

    def observations(self):
        for i in range(self.n):
            yield Observation(float(self.y[i]), int(self.delta[i]), int(self.z[i]),
                              float(self.x[i]), int(self.w[i]))

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.delta[idx], self.z[idx], self.x[idx], self.w[idx],
                       z_codebook=self.z_codebook, z_labels=self.z_labels,
                       w_labels=self.w_labels, source=self.source)

    def with_x(self, x) -> "Dataset":
        return Dataset(self.y, self.delta, self.z, x, self.w, z_codebook=self.z_codebook,
                       z_labels=self.z_labels, w_labels=self.w_labels, source=self.source)

    def crosstab(self) -> np.ndarray:
        """Counts indexed ``[z_level, w_level]``."""
        table = np.zeros((self.levels, self.levels), dtype=np.int64)
        np.add.at(table, (self.z, self.w), 1)
        return table

    def max_event_time(self) -> float:
        events = self.y[self.delta == 1]
        return float(events.max()) if events.size else float(self.y.max())
