"""Typed tables, schema sidecars, CSV ingestion and Dirichlet label-skew partitioning."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, IngestionError, SchemaError

CONTINUOUS = "continuous"
DISCRETE = "discrete"
SYNTHETIC_FLAG = "__synthetic"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    is_label: bool = False

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    """Ordered column list with exactly one discrete label column."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        labels = [c for c in self.columns if c.is_label]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, got {len(labels)}")
        if labels[0].kind != DISCRETE:
            raise SchemaError(f"label column {labels[0].name!r} must be discrete")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def continuous(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == CONTINUOUS]

    @property
    def discrete(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == DISCRETE]

    @property
    def label(self) -> str:
        return next(c.name for c in self.columns if c.is_label)

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @property
    def n_discrete(self) -> int:
        return len(self.discrete)

    def kind_of(self, name: str) -> str:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"columns": [{"name": c.name, "kind": c.kind, "label": c.is_label}
                            for c in self.columns]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        try:
            cols = [Column(str(c["name"]), str(c["kind"]), bool(c.get("label", False)))
                    for c in obj["columns"]]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(tuple(cols))

    @classmethod
    def from_json(cls, text: str | bytes) -> "Schema":
        return cls.from_dict(json.loads(text))


def load_schema(path) -> Schema:
    with open(path, "rb") as fh:
        return Schema.from_json(fh.read())


@dataclass(frozen=True, eq=False)
class Table:
    """Column-oriented table.

    Continuous columns are float64 arrays, discrete columns are arrays of str
    tokens. ``synthetic`` is an optional per-row provenance mask.
    """

    schema: Schema
    data: dict[str, np.ndarray]
    synthetic: np.ndarray | None = field(default=None)

    def __post_init__(self):
        lengths = set()
        data = {}
        for col in self.schema.columns:
            if col.name not in self.data:
                raise SchemaError(f"missing column {col.name!r}")
            arr = self.data[col.name]
            if col.kind == CONTINUOUS:
                arr = np.asarray(arr, dtype=np.float64)
                if not np.all(np.isfinite(arr)):
                    raise IngestionError(f"non-finite value in continuous column {col.name!r}")
            else:
                arr = np.asarray(arr).astype(str)
            arr.setflags(write=False)
            data[col.name] = arr
            lengths.add(arr.shape[0])
        if len(lengths) > 1:
            raise SchemaError(f"ragged columns: lengths {sorted(lengths)}")
        object.__setattr__(self, "data", data)
        if self.synthetic is not None:
            mask = np.asarray(self.synthetic, dtype=bool)
            if mask.shape[0] != self.n_rows:
                raise SchemaError("provenance mask length does not match row count")
            mask.setflags(write=False)
            object.__setattr__(self, "synthetic", mask)

    @property
    def n_rows(self) -> int:
        if not self.schema.columns:
            return 0
        return int(self.data[self.schema.columns[0].name].shape[0])

    def __len__(self) -> int:
        return self.n_rows

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[name]

    @property
    def labels(self) -> np.ndarray:
        return self.data[self.schema.label]

    @property
    def synthetic_mask(self) -> np.ndarray:
        if self.synthetic is None:
            return np.zeros(self.n_rows, dtype=bool)
        return self.synthetic

    def take(self, index: Sequence[int] | np.ndarray) -> "Table":
        index = np.asarray(index, dtype=np.intp)
        mask = None if self.synthetic is None else self.synthetic[index]
        return Table(self.schema, {k: v[index] for k, v in self.data.items()}, mask)

    def rows(self) -> Iterable[tuple]:
        cols = [self.data[n] for n in self.schema.names]
        for i in range(self.n_rows):
            yield tuple(c[i].item() if c.dtype.kind == "f" else str(c[i]) for c in cols)

    def to_csv(self, with_provenance: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = self.schema.names + ([SYNTHETIC_FLAG] if with_provenance else [])
        writer.writerow(header)
        mask = self.synthetic_mask
        for i, row in enumerate(self.rows()):
            cells = [repr(v) if isinstance(v, float) else v for v in row]
            if with_provenance:
                cells.append("1" if mask[i] else "0")
            writer.writerow(cells)
        return buf.getvalue()

    @classmethod
    def empty(cls, schema: Schema) -> "Table":
        return cls(schema, {c.name: np.empty(0, dtype=np.float64 if c.kind == CONTINUOUS else str)
                            for c in schema.columns})


def concat_tables(tables: Sequence[Table]) -> Table:
    if not tables:
        raise ValueError("nothing to concatenate")
    schema = tables[0].schema
    for t in tables[1:]:
        if t.schema != schema:
            raise SchemaError("cannot concatenate tables with different schemas")
    data = {n: np.concatenate([t.data[n] for t in tables]) for n in schema.names}
    if all(t.synthetic is None for t in tables):
        mask = None
    else:
        mask = np.concatenate([t.synthetic_mask for t in tables])
    return Table(schema, data, mask)


def load_table(csv_bytes: bytes | str, schema: Schema) -> Table:
    """Parse RFC-4180 CSV against an explicit schema.

    Extra CSV columns (e.g. a ``__synthetic`` provenance flag) are ignored,
    every schema column must be present, and empty cells are rejected.
    """
    text = csv_bytes.decode("utf-8-sig") if isinstance(csv_bytes, bytes) else csv_bytes
    if not text.strip():
        raise IngestionError("empty CSV input")
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    positions = {}
    for name in schema.names:
        if name not in header:
            raise IngestionError(f"CSV header is missing column {name!r}", column=name)
        positions[name] = header.index(name)
    flag_pos = header.index(SYNTHETIC_FLAG) if SYNTHETIC_FLAG in header else None

    cells: dict[str, list] = {n: [] for n in schema.names}
    flags = []
    for row_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestionError(f"row {row_no} has {len(row)} cells, expected {len(header)}",
                                 row=row_no)
        for col in schema.columns:
            raw = row[positions[col.name]].strip()
            if raw == "":
                raise IngestionError(f"missing cell at row {row_no}, column {col.name!r}",
                                     row=row_no, column=col.name)
            if col.kind == CONTINUOUS:
                try:
                    value = float(raw)
                except ValueError:
                    raise IngestionError(
                        f"unparseable value {raw!r} at row {row_no}, column {col.name!r}",
                        row=row_no, column=col.name) from None
                if not math.isfinite(value):
                    raise IngestionError(
                        f"non-finite value {raw!r} at row {row_no}, column {col.name!r}",
                        row=row_no, column=col.name)
                cells[col.name].append(value)
            else:
                cells[col.name].append(raw)
        if flag_pos is not None:
            flags.append(row[flag_pos].strip() in ("1", "true", "True"))

    data = {}
    for col in schema.columns:
        if col.kind == CONTINUOUS:
            data[col.name] = np.asarray(cells[col.name], dtype=np.float64)
        else:
            data[col.name] = np.asarray(cells[col.name], dtype=str)
    return Table(schema, data, np.asarray(flags, dtype=bool) if flag_pos is not None else None)


def read_table(path, schema: Schema) -> Table:
    with open(path, "rb") as fh:
        return load_table(fh.read(), schema)


@dataclass(frozen=True)
class PartitionPlan:
    beta: float
    num_clients: int
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"Dirichlet concentration must be positive, got {self.beta}")
        if self.num_clients < 1:
            raise ConfigError(f"need at least one client, got {self.num_clients}")


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``; leftover units go to the largest fractional parts."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps the lower client index first on ties
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(table: Table, plan: PartitionPlan) -> list[Table]:
    """Split rows into ``plan.num_clients`` label-skewed shards.

    For every label (in sorted order) a proportion vector p ~ Dir(beta) is
    drawn once, the label's rows are shuffled and handed out in
    largest-remainder counts. Shards keep the input row order.
    """
    k = plan.num_clients
    if k > table.n_rows:
        raise ConfigError(f"{k} clients requested for {table.n_rows} rows")
    if k == 1:
        return [table]
    rng = np.random.default_rng(plan.seed)
    labels = table.labels
    owner = np.empty(table.n_rows, dtype=np.int64)
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        props = rng.dirichlet(np.full(k, plan.beta))
        counts = largest_remainder(props, idx.size)
        shuffled = rng.permutation(idx)
        owner[shuffled] = np.repeat(np.arange(k), counts)
    return [table.take(np.flatnonzero(owner == c)) for c in range(k)]


def train_test_split(table: Table, test_fraction: float, seed: int) -> tuple[Table, Table]:
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(table.n_rows)
    n_test = int(round(test_fraction * table.n_rows))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return table.take(train_idx), table.take(test_idx)
