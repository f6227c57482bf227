"""Forecast/observation datasets and their CSV encoding.

File layout (comma separated, one header row)::

    t,y[,group],<expert 1>,<expert 2>,...

``t`` is a free-form round label, ``y`` the observation, the optional
``group`` column a label used for per-group robustness statistics, and one
column per expert follows. An empty expert cell means the expert is
inactive on that round.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from expertagg.core import ForecastRound


class DatasetError(ValueError):
    """Invalid dataset content; messages carry the 1-based data row."""


@dataclass
class Dataset:
    observations: np.ndarray
    forecasts: np.ndarray
    bound: float | None = None
    expert_names: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    groups: list[str] | None = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        self.forecasts = np.asarray(self.forecasts, dtype=float)
        if self.forecasts.ndim != 2 or self.forecasts.shape[0] != self.observations.shape[0]:
            raise DatasetError("forecasts must be a T x N matrix matching the observations")
        T, N = self.forecasts.shape
        if not self.expert_names:
            self.expert_names = [f"e{j}" for j in range(N)]
        if not self.labels:
            self.labels = [str(t + 1) for t in range(T)]
        if self.bound is None:
            finite = self.forecasts[~np.isnan(self.forecasts)]
            self.bound = float(max(self.observations.max(initial=0.0), finite.max(initial=0.0)))
        self.validate()

    def validate(self) -> None:
        T, N = self.forecasts.shape
        if len(self.expert_names) != N:
            raise DatasetError("one name per expert column")
        if len(self.labels) != T or (self.groups is not None and len(self.groups) != T):
            raise DatasetError("one label (and group) per round")
        B = self.bound
        for t in range(T):
            row = self.forecasts[t]
            act = ~np.isnan(row)
            if not act.any():
                raise DatasetError(f"row {t + 1}: no active expert")
            y = self.observations[t]
            if not np.isfinite(y):
                raise DatasetError(f"row {t + 1}: missing observation")
            if y < 0 or y > B or np.any(row[act] < 0) or np.any(row[act] > B) or not np.all(np.isfinite(row[act])):
                raise DatasetError(f"row {t + 1}: value outside [0, {B}]")

    @property
    def T(self) -> int:
        return self.forecasts.shape[0]

    @property
    def N(self) -> int:
        return self.forecasts.shape[1]

    @property
    def active(self) -> np.ndarray:
        return ~np.isnan(self.forecasts)

    def round(self, i: int, reveal: bool = True) -> ForecastRound:
        """Round at 0-based position ``i``; its ``t`` is ``i + 1``."""
        return ForecastRound(i + 1, self.forecasts[i], float(self.observations[i]) if reveal else None)

    def rounds(self) -> list[ForecastRound]:
        return [self.round(i) for i in range(self.T)]

    def head(self, t: int) -> "Dataset":
        return self.select(np.arange(t))

    def select(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.observations[idx], self.forecasts[idx], self.bound, list(self.expert_names),
            [self.labels[i] for i in idx],
            None if self.groups is None else [self.groups[i] for i in idx],
        )


def _parse_number(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DatasetError(f"row {row}: column {col!r}: cannot parse {cell!r} as a number") from None
    if not np.isfinite(v):
        raise DatasetError(f"row {row}: column {col!r}: non-finite value {cell!r}")
    return v


def parse_dataset(text: str, bound: float | None = None) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 3:
        raise DatasetError("need columns t, y and at least one expert")
    has_group = header[2].lower() == "group"
    first = 3 if has_group else 2
    names = header[first:]
    if not names:
        raise DatasetError("no expert columns")
    ys, rows, labels, groups = [], [], [], []
    for r, cells in enumerate(reader, start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise DatasetError(f"row {r}: expected {len(header)} cells, found {len(cells)}")
        labels.append(cells[0].strip())
        ys.append(_parse_number(cells[1].strip(), r, header[1]))
        if has_group:
            groups.append(cells[2].strip())
        row = [np.nan if not c.strip() else _parse_number(c.strip(), r, names[k])
               for k, c in enumerate(cells[first:])]
        if all(np.isnan(v) for v in row):
            raise DatasetError(f"row {r}: no active expert")
        rows.append(row)
    if not rows:
        raise DatasetError("no data rows")
    return Dataset(np.array(ys), np.array(rows, dtype=float), bound, names, labels,
                   groups if has_group else None)


def load_dataset(path: str | os.PathLike, bound: float | None = None) -> Dataset:
    with open(path, newline="") as fh:
        return parse_dataset(fh.read(), bound)


def format_number(x: float) -> str:
    return repr(float(x))


def dump_dataset(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["t", "y"] + (["group"] if data.groups is not None else []) + list(data.expert_names)
    w.writerow(head)
    for i in range(data.T):
        row = [data.labels[i], format_number(data.observations[i])]
        if data.groups is not None:
            row.append(data.groups[i])
        row += ["" if np.isnan(v) else format_number(v) for v in data.forecasts[i]]
        w.writerow(row)
    return buf.getvalue()


def save_dataset(data: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dump_dataset(data))


def from_rounds(rounds: Sequence[ForecastRound], bound: float | None = None) -> Dataset:
    return Dataset(np.array([r.observation for r in rounds], dtype=float),
                   np.vstack([r.forecasts for r in rounds]), bound)
