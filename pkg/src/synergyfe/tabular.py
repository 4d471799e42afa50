"""Columnar mixed-type tables, CSV ingestion, splitting, folds and the
per-fold encode/scale pipeline pieces (min-max scaling, one-hot encoding).

A :class:`Table` is immutable once built. Numeric columns hold ``float64``
arrays with ``nan`` for missing cells; categorical columns hold ``object``
arrays of ``str`` with ``None`` for missing cells.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING = "⟨missing⟩"
MAX_CLASSES = 1000


class DataError(ValueError):
    """Raised for malformed input data or invalid table operations."""


class Kind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class Column:
    name: str
    kind: Kind
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind is Kind.NUMERIC:
            vals = np.asarray(self.values, dtype=np.float64)
            if np.isinf(vals).any():
                raise DataError(f"column {self.name!r} has infinite values")
        else:
            vals = np.array(
                [None if v is None else str(v) for v in self.values], dtype=object
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def take(self, rows) -> "Column":
        return Column(self.name, self.kind, self.values[rows])


@dataclass(frozen=True)
class Table:
    """Named columns plus a designated target column and task kind.

    ``target`` and ``task`` may both be ``None`` for feature-only tables,
    such as rows to transform with saved features.
    """

    columns: tuple
    target: str | None
    task: TaskKind | None

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise DataError("all columns must have the same number of rows")
        if self.target is None:
            return
        if self.target not in names:
            raise DataError(f"target column {self.target!r} not present")
        tcol = self.column(self.target)
        if self.task is TaskKind.CLASSIFICATION and tcol.kind is not Kind.CATEGORICAL:
            raise DataError("classification targets must be categorical")
        if self.task is TaskKind.REGRESSION and tcol.kind is not Kind.NUMERIC:
            raise DataError("regression targets must be numeric")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns if c.name != self.target]

    @property
    def kinds(self) -> dict[str, Kind]:
        return {c.name: c.kind for c in self.columns}

    @property
    def y(self) -> np.ndarray:
        if self.target is None:
            raise DataError("table has no target column")
        return self.column(self.target).values

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(c.name == name for c in self.columns)

    def take(self, rows) -> "Table":
        rows = np.asarray(rows)
        return Table(tuple(c.take(rows) for c in self.columns), self.target, self.task)

    def with_columns(self, extra: Iterable[Column]) -> "Table":
        return Table(self.columns + tuple(extra), self.target, self.task)

    @classmethod
    def from_arrays(cls, data: dict, target: str, task, kinds: dict | None = None) -> "Table":
        """Build a table from ``{name: array}``; kinds default to numeric
        for float/int arrays and categorical otherwise (classification
        targets are always categorical)."""
        task = None if task is None else TaskKind(task)
        kinds = dict(kinds or {})
        cols = []
        for name, vals in data.items():
            kind = kinds.get(name)
            if kind is None:
                arr = np.asarray(vals)
                if name == target and task is TaskKind.CLASSIFICATION:
                    kind = Kind.CATEGORICAL
                elif arr.dtype.kind in "fiub":
                    kind = Kind.NUMERIC
                else:
                    kind = Kind.CATEGORICAL
            kind = Kind(kind)
            if kind is Kind.CATEGORICAL:
                vals = [_label(v) for v in vals]
            cols.append(Column(name, kind, vals))
        return cls(tuple(cols), target, task)


def _label(v):
    if v is None:
        return None
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


def _parse_float(s: str):
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(
    path,
    target: str | None,
    task,
    max_cat_card: int = 20,
    schema: dict | str | Path | None = None,
) -> Table:
    """Read a headered CSV file into a :class:`Table`.

    Empty cells are missing. A column becomes numeric when every non-missing
    cell parses as a finite float and it has more than ``max_cat_card``
    distinct values; everything else is categorical. ``schema`` (a dict or
    a path to a JSON sidecar of the form ``{"columns": {name: kind}}``)
    overrides inference per column. The target kind always follows ``task``;
    with ``target=None`` every column is a feature.
    """
    task = None if task is None else TaskKind(task)
    overrides = _load_schema(schema)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                raise DataError(f"{path}: missing header row")
            rows = list(reader)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = [h.strip() for h in header]
    if target is not None and target not in header:
        raise DataError(f"target column {target!r} not found in {path}")
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    width = len(header)
    for lineno, row in enumerate(rows, start=2):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")

    cols = []
    for c, name in enumerate(header):
        raw = [r[c] for r in rows]
        cells = [None if s.strip() == "" else s.strip() for s in raw]
        kind = overrides.get(name)
        if name == target:
            kind = Kind.CATEGORICAL if task is TaskKind.CLASSIFICATION else Kind.NUMERIC
        parsed = [None if s is None else _parse_float(s) for s in cells]
        parseable = all(p is not None for p, s in zip(parsed, cells) if s is not None)
        if kind is None:
            distinct = len({p for p in parsed if p is not None})
            kind = Kind.NUMERIC if parseable and distinct > max_cat_card else Kind.CATEGORICAL
        if kind is Kind.NUMERIC:
            if not parseable:
                raise DataError(f"column {name!r} has non-numeric values")
            vals = np.array([np.nan if p is None else p for p in parsed], dtype=np.float64)
        else:
            vals = cells
        cols.append(Column(name, kind, vals))
    table = Table(tuple(cols), target, task)
    if target is None:
        return table
    if task is TaskKind.CLASSIFICATION:
        n_classes = len({v for v in table.y if v is not None})
        if n_classes > MAX_CLASSES:
            raise DataError(f"classification target has {n_classes} classes (> {MAX_CLASSES})")
    if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in table.y):
        raise DataError("target column has missing values")
    return table


def _load_schema(schema) -> dict:
    if schema is None:
        return {}
    if not isinstance(schema, dict):
        with open(schema, encoding="utf-8") as fh:
            schema = json.load(fh)
    try:
        return {name: Kind(kind) for name, kind in schema.get("columns", {}).items()}
    except ValueError as exc:
        raise DataError(f"bad schema: {exc}") from exc


def write_csv(table: Table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(table.names)
        for i in range(table.n_rows):
            w.writerow([_cell(c, i) for c in table.columns])


def _cell(col: Column, i: int) -> str:
    v = col.values[i]
    if col.kind is Kind.NUMERIC:
        return "" if np.isnan(v) else repr(float(v))
    return "" if v is None else v


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


def train_test_split(t: Table, s: SplitSpec) -> tuple[Table, Table]:
    n = t.n_rows
    if n < 5:
        raise DataError("need at least 5 rows to split")
    n_train = math.ceil(n * (1.0 - s.test_fraction))
    if n_train >= n:
        raise DataError("test partition would be empty")
    perm = np.random.default_rng(s.seed).permutation(n)
    return t.take(perm[:n_train]), t.take(perm[n_train:])


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray = field(repr=False)
    seed: int

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train_rows, test_rows) for one fold."""
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def __iter__(self):
        return (self.split(f) for f in range(self.k))


def make_folds(n_rows: int, k: int, seed: int) -> FoldPlan:
    if k < 2:
        raise DataError("fold count must be at least 2")
    if k > n_rows:
        raise DataError(f"cannot make {k} folds from {n_rows} rows")
    perm = np.random.default_rng(seed).permutation(n_rows)
    assign = np.empty(n_rows, dtype=np.int64)
    assign[perm] = np.arange(n_rows) % k
    assign.setflags(write=False)
    return FoldPlan(k, assign, seed)


@dataclass(frozen=True)
class ScalerState:
    lo: np.ndarray
    span: np.ndarray
    mean: np.ndarray


def fit_minmax(train) -> ScalerState:
    """Per-column min/max (and mean, for imputing missing cells) over
    training rows. ``train`` is an ``(n, p)`` array with ``nan`` for
    missing values."""
    x = np.asarray(train, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    present = ~np.isnan(x)
    n_present = present.sum(0)
    mean = np.where(present, x, 0.0).sum(0) / np.maximum(n_present, 1)
    filled = np.where(np.isnan(x), mean, x)
    lo = filled.min(0) if len(filled) else np.zeros(x.shape[1])
    hi = filled.max(0) if len(filled) else np.zeros(x.shape[1])
    return ScalerState(lo, hi - lo, mean)


def apply_minmax(state: ScalerState, rows) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    x = np.where(np.isnan(x), state.mean, x)
    safe = np.where(state.span > 0, state.span, 1.0)
    out = np.where(state.span > 0, (x - state.lo) / safe, 0.0)
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class EncoderState:
    categories: tuple

    @property
    def index(self) -> dict:
        return {c: i for i, c in enumerate(self.categories)}


def _norm_cat(v):
    return MISSING if v is None else v


def fit_onehot(train) -> EncoderState:
    seen = dict.fromkeys(_norm_cat(v) for v in train)
    return EncoderState(tuple(seen))


def apply_onehot(state: EncoderState, values) -> np.ndarray:
    idx = state.index
    out = np.zeros((len(values), len(state.categories)))
    for r, v in enumerate(values):
        j = idx.get(_norm_cat(v))
        if j is not None:
            out[r, j] = 1.0
    return out


def category_codes(values: Sequence, mapping: dict | None = None) -> tuple[np.ndarray, dict]:
    """Integer codes by first appearance. With ``mapping`` given, unseen
    values get -1."""
    if mapping is None:
        mapping = {}
        for v in values:
            mapping.setdefault(_norm_cat(v), len(mapping))
    codes = np.array([mapping.get(_norm_cat(v), -1) for v in values], dtype=np.int64)
    return codes, mapping
