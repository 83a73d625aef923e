"""Datasets, CSV ingestion and the normalization bookkeeping used for reports."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DataError

_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass
class Dataset:
    """N inputs in D dimensions plus targets.

    ``X`` and ``y`` hold the (normalized) values the models are fit to;
    ``x_mean``/``x_std`` and ``y_mean``/``y_std`` map them back to the
    original units.  A dataset built directly from arrays has the identity
    transform.
    """

    X: np.ndarray
    y: np.ndarray
    column_names: list = field(default_factory=list)
    target_name: str = "y"
    x_mean: Optional[np.ndarray] = None
    x_std: Optional[np.ndarray] = None
    y_mean: float = 0.0
    y_std: float = 1.0
    source_path: Optional[str] = None
    dropped_rows: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite values")
        self.X, self.y = X, y
        if self.x_mean is None:
            self.x_mean = np.zeros(X.shape[1])
        if self.x_std is None:
            self.x_std = np.ones(X.shape[1])
        if not self.column_names:
            self.column_names = [f"x{d}" for d in range(X.shape[1])]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @classmethod
    def normalized(cls, X, y, **kwargs):
        """Build a dataset whose columns and target have mean 0 and variance 1."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] < 2:
            raise DataError("need at least two rows to normalize")
        x_mean = X.mean(axis=0)
        x_std = X.std(axis=0)
        y_mean = float(y.mean())
        y_std = float(y.std())
        names = kwargs.get("column_names") or [f"x{d}" for d in range(X.shape[1])]
        for d, s in enumerate(x_std):
            if not s > 0:
                raise DataError(f"column {names[d]!r} is constant (zero variance)")
        if not y_std > 0:
            raise DataError("target column is constant (zero variance)")
        return cls(
            (X - x_mean) / x_std,
            (y - y_mean) / y_std,
            x_mean=x_mean,
            x_std=x_std,
            y_mean=y_mean,
            y_std=y_std,
            **kwargs,
        )

    def x_original(self):
        return self.X * self.x_std + self.x_mean

    def y_original(self):
        return self.y * self.y_std + self.y_mean

    def x_range(self, dim):
        """max - min of the (normalized) inputs on one dimension."""
        col = self.X[:, dim]
        return float(col.max() - col.min())

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx],
            self.y[idx],
            column_names=list(self.column_names),
            target_name=self.target_name,
            x_mean=self.x_mean,
            x_std=self.x_std,
            y_mean=self.y_mean,
            y_std=self.y_std,
            source_path=self.source_path,
        )


def ingest_csv(path, target=None, columns=None, normalize=True):
    """Read a headered numeric CSV into a normalized :class:`Dataset`.

    ``target`` defaults to the last column.
    Rows with a missing cell are dropped (and counted); any other non-numeric
    cell is an error naming its row and column.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if target is None:
        target = header[-1]
    if target not in header:
        raise DataError(f"{path}: target column {target!r} not in header {header}")
    if columns is None:
        columns = [h for h in header if h != target]
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"{path}: columns {missing} not in header")
    if not columns:
        raise DataError(f"{path}: no input columns")
    use = [header.index(c) for c in columns] + [header.index(target)]

    values = []
    dropped = 0
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        parsed = []
        skip = False
        for j in use:
            cell = row[j].strip()
            if cell.lower() in _MISSING:
                skip = True
                break
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {lineno}, column {header[j]!r}: cannot parse {cell!r}"
                ) from None
            if not math.isfinite(v):
                skip = True
                break
            parsed.append(v)
        if skip:
            dropped += 1
            continue
        values.append(parsed)

    if dropped:
        warnings.warn(f"{path}: dropped {dropped} row(s) with missing values", stacklevel=2)
    if len(values) < 2:
        raise DataError(f"{path}: need at least two complete rows, found {len(values)}")
    arr = np.array(values)
    kwargs = dict(
        column_names=list(columns),
        target_name=target,
        source_path=str(path),
        dropped_rows=dropped,
    )
    if normalize:
        return Dataset.normalized(arr[:, :-1], arr[:, -1], **kwargs)
    return Dataset(arr[:, :-1], arr[:, -1], **kwargs)
