"""Reference tables: simulated (parameter, summary statistic) records.

Tables are immutable. The CSV interchange format is a single header row with
``param:<name>`` columns followed by ``stat:<name>`` columns, then one numeric
record per row. Values are written with the shortest round-trip decimal
representation so that ``read_csv(write_csv(t))`` reproduces ``t`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PARAM_PREFIX = "param:"
STAT_PREFIX = "stat:"


class TableError(ValueError):
    """Malformed or invalid reference-table data."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim == 1 and ndim == 2:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise TableError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_names(names: Sequence[str], kind: str) -> tuple[str, ...]:
    names = tuple(str(n) for n in names)
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise TableError(f"duplicate {kind} names: {dupes}")
    for n in names:
        if not n or "," in n or "\n" in n:
            raise TableError(f"invalid {kind} name {n!r}")
    return names


@dataclass(frozen=True, eq=False)
class ReferenceTable:
    """N records of parameters (N x p) and summary statistics (N x k)."""

    param_names: tuple[str, ...]
    stat_names: tuple[str, ...]
    params: np.ndarray
    stats: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "param_names", _check_names(self.param_names, "parameter"))
        object.__setattr__(self, "stat_names", _check_names(self.stat_names, "statistic"))
        params = _frozen(self.params, 2)
        stats = _frozen(self.stats, 2)
        if params.shape[0] != stats.shape[0]:
            raise TableError(
                f"params has {params.shape[0]} rows but stats has {stats.shape[0]}"
            )
        if params.shape[0] < 1:
            raise TableError("a reference table needs at least one record")
        if params.shape[1] != len(self.param_names):
            raise TableError("param_names does not match params columns")
        if stats.shape[1] != len(self.stat_names):
            raise TableError("stat_names does not match stats columns")
        for arr, names in ((params, self.param_names), (stats, self.stat_names)):
            bad = ~np.isfinite(arr)
            if bad.any():
                r, c = np.argwhere(bad)[0]
                raise TableError("non-finite value", row=int(r), column=names[c])
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "stats", stats)

    def __len__(self) -> int:
        return self.params.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReferenceTable):
            return NotImplemented
        return (
            self.param_names == other.param_names
            and self.stat_names == other.stat_names
            and self.params.shape == other.params.shape
            and self.stats.shape == other.stats.shape
            and bool(np.array_equal(self.params, other.params))
            and bool(np.array_equal(self.stats, other.stats))
        )

    @property
    def n_stats(self) -> int:
        return self.stats.shape[1]

    def param(self, name: str) -> np.ndarray:
        try:
            return self.params[:, self.param_names.index(name)]
        except ValueError:
            raise KeyError(f"no parameter column {name!r}; have {list(self.param_names)}") from None

    def stat(self, name: str) -> np.ndarray:
        try:
            return self.stats[:, self.stat_names.index(name)]
        except ValueError:
            raise KeyError(f"no statistic column {name!r}; have {list(self.stat_names)}") from None

    def take(self, rows) -> "ReferenceTable":
        rows = np.asarray(rows)
        return ReferenceTable(self.param_names, self.stat_names, self.params[rows], self.stats[rows])

    def head(self, count: int) -> "ReferenceTable":
        return self.take(np.arange(min(count, len(self))))

    def with_stats(self, names: Sequence[str], values: np.ndarray) -> "ReferenceTable":
        """Return a copy with extra statistic columns appended."""
        values = np.asarray(values, dtype=np.float64).reshape(len(self), -1)
        return ReferenceTable(
            self.param_names,
            self.stat_names + tuple(names),
            self.params,
            np.hstack([self.stats, values]),
        )

    def query(self, row: int) -> "QueryPoint":
        return QueryPoint(self.stats[row], self.stat_names)


@dataclass(frozen=True, eq=False)
class QueryPoint:
    """An observed summary-statistic vector aligned to a table's stat_names."""

    stats: np.ndarray
    stat_names: tuple[str, ...] | None = None

    def __post_init__(self):
        s = np.array(self.stats, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(s)):
            raise TableError("query contains non-finite values")
        if self.stat_names is not None and len(self.stat_names) != s.size:
            raise TableError(
                f"query has {s.size} values but {len(self.stat_names)} names"
            )
        s.setflags(write=False)
        object.__setattr__(self, "stats", s)

    def __len__(self) -> int:
        return self.stats.size


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips to the same double
    return repr(float(x))


def write_csv(table: ReferenceTable, path) -> None:
    header = [PARAM_PREFIX + n for n in table.param_names] + [
        STAT_PREFIX + n for n in table.stat_names
    ]
    data = np.hstack([table.params, table.stats])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path) -> ReferenceTable:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise TableError(f"{path}: empty file or missing header", row=0)
        header = header_line.rstrip("\r\n").split(",")
        param_names, stat_names = [], []
        seen_stat = False
        for i, col in enumerate(header):
            if col.startswith(PARAM_PREFIX):
                if seen_stat:
                    raise TableError("param column after stat columns", row=0, column=col)
                param_names.append(col[len(PARAM_PREFIX):])
            elif col.startswith(STAT_PREFIX):
                seen_stat = True
                stat_names.append(col[len(STAT_PREFIX):])
            else:
                raise TableError("header cell lacks param:/stat: prefix", row=0, column=col)
        width = len(header)
        rows = []
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise TableError(f"expected {width} cells, found {len(cells)}", row=lineno)
            values = []
            for col, cell in zip(header, cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise TableError(f"non-numeric cell {cell!r}", row=lineno, column=col) from None
                if not math.isfinite(v):
                    raise TableError(f"non-finite cell {cell!r}", row=lineno, column=col)
                values.append(v)
            rows.append(values)
    if not rows:
        raise TableError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    p = len(param_names)
    return ReferenceTable(tuple(param_names), tuple(stat_names), data[:, :p], data[:, p:])


def split(table: ReferenceTable, test_count: int, seed: int) -> tuple[ReferenceTable, ReferenceTable]:
    """Partition rows into (train, test); each side keeps the original row order."""
    n = len(table)
    if not 0 < test_count < n:
        raise ValueError(f"test_count must be in (0, {n}), got {test_count}")
    rng = np.random.default_rng(seed)
    test_rows = np.sort(rng.choice(n, size=test_count, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[test_rows] = True
    return table.take(np.flatnonzero(~mask)), table.take(test_rows)


def add_noise_columns(table: ReferenceTable, count: int, seed: int) -> ReferenceTable:
    """Append ``count`` iid U[0,1] statistic columns named ``noise<i>``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    existing = set(table.stat_names)
    names, i = [], 0
    while len(names) < count:
        name = f"noise{i}"
        if name not in existing:
            names.append(name)
        i += 1
    noise = np.random.default_rng(seed).uniform(0.0, 1.0, size=(len(table), count))
    return table.with_stats(names, noise)
