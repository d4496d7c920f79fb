"""Tabular process data: CSV ingestion, export and autoscaling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import IngestionError, InputError

LABEL_COLUMN = "label"
TIME_COLUMN = "time"


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    names: tuple
    labels: np.ndarray | None = None
    time: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise InputError("X must be a 2-D matrix")
        if len(self.names) != X.shape[1]:
            raise InputError("one name per column is required")
        if not np.all(np.isfinite(X)):
            raise InputError("X contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))
        for attr in ("labels", "time"):
            v = getattr(self, attr)
            if v is not None:
                v = np.asarray(v)
                if v.shape != (X.shape[0],):
                    raise InputError(f"{attr} must have one entry per row")
                object.__setattr__(self, attr, v)
        if self.labels is not None:
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise InputError("labels must be 0 or 1")
            object.__setattr__(self, "labels", self.labels.astype(int))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def time_index(self) -> np.ndarray:
        return self.time if self.time is not None else np.arange(self.n)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.names,
                       None if self.labels is None else self.labels[idx],
                       None if self.time is None else self.time[idx])


def _number(cell, row, column):
    try:
        v = float(cell)
    except ValueError:
        raise IngestionError(f"non-numeric value {cell!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise IngestionError(f"non-finite value {cell!r}", row=row, column=column)
    return v


def load_dataset(path, delimiter=",", label_column=LABEL_COLUMN, time_column=TIME_COLUMN,
                 require_labels=False) -> Dataset:
    """Read a delimited file with a header row.

    Rows are numbered from 1 for the first data row. ``label`` and ``time``
    columns are split off when present; every other column is a process
    variable.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise IngestionError(f"{path}: duplicate column names", row=0)
    if require_labels and label_column not in header:
        raise IngestionError(f"{path}: missing label column", column=label_column)
    body = rows[1:]
    if not body:
        raise IngestionError(f"{path}: no data rows")
    values = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise IngestionError(f"{path}: expected {len(header)} fields, found {len(r)}", row=i)
        for j, cell in enumerate(r):
            values[i - 1, j] = _number(cell.strip(), i, header[j])
    labels = time = None
    keep = list(range(len(header)))
    if label_column in header:
        j = header.index(label_column)
        labels = values[:, j]
        bad = np.flatnonzero((labels != 0) & (labels != 1))
        if bad.size:
            raise IngestionError(f"{path}: label must be 0 or 1", row=int(bad[0]) + 1, column=label_column)
        keep.remove(j)
    if time_column in header:
        j = header.index(time_column)
        time = values[:, j]
        keep.remove(j)
    if not keep:
        raise IngestionError(f"{path}: no process variable columns")
    return Dataset(values[:, keep], tuple(header[j] for j in keep), labels, time)


def _fmt(v) -> str:
    return "%.17g" % v


def write_dataset(ds: Dataset, path, delimiter=",") -> None:
    header = list(ds.names)
    cols = [ds.X[:, j] for j in range(ds.p)]
    if ds.time is not None:
        header.insert(0, TIME_COLUMN)
        cols.insert(0, ds.time)
    if ds.labels is not None:
        header.append(LABEL_COLUMN)
        cols.append(ds.labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            w.writerow([str(int(c[i])) if c is ds.labels else _fmt(c[i]) for c in cols])


@dataclass(frozen=True)
class Scaler:
    """Column means and (n-1) standard deviations of healthy training data."""

    mean: np.ndarray
    sd: np.ndarray
    names: tuple = ()

    def apply(self, ds):
        if isinstance(ds, Dataset):
            if ds.p != self.mean.size:
                raise InputError(f"scaler has {self.mean.size} variables, data has {ds.p}")
            return replace(ds, X=(ds.X - self.mean) / self.sd)
        return (np.asarray(ds, dtype=float) - self.mean) / self.sd


def fit_scaler(healthy) -> Scaler:
    ds = healthy if isinstance(healthy, Dataset) else None
    X = ds.X if ds is not None else np.asarray(healthy, dtype=float)
    names = ds.names if ds is not None else tuple(f"x{j + 1}" for j in range(X.shape[1]))
    if X.shape[0] < 2:
        raise InputError("scaling needs at least two healthy rows")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    const = np.flatnonzero(~(sd > 0))
    if const.size:
        raise InputError(f"variable {names[const[0]]!r} is constant in the healthy data")
    return Scaler(mean, sd, names)


def apply_scaler(scaler: Scaler, ds):
    return scaler.apply(ds)
