"""Column-wise similarity between a real and a synthetic table.

Discrete columns are scored with base-2 Jensen-Shannon divergence over the
union of observed categories. Continuous columns are scored with the 1-D
Wasserstein-1 distance after min-max scaling both samples by the real
column's range. When the tables differ in size the larger one is subsampled
without replacement to the smaller size (seeded) before scoring.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import wasserstein_distance

from .errors import SchemaError
from .table import CONTINUOUS, DISCRETE, Table


def _distribution(values, support) -> np.ndarray:
    uniq, counts = np.unique(np.asarray(values).astype(str), return_counts=True)
    lookup = dict(zip(uniq.tolist(), counts.tolist()))
    p = np.array([lookup.get(c, 0) for c in support], dtype=np.float64)
    return p / p.sum()


def jsd(p, q) -> float:
    """Base-2 Jensen-Shannon divergence of two probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0)


def column_jsd(real, synth) -> float:
    real, synth = np.asarray(real), np.asarray(synth)
    if real.size == 0 or synth.size == 0:
        raise ValueError("cannot score an empty column")
    support = sorted(set(real.astype(str).tolist()) | set(synth.astype(str).tolist()))
    return jsd(_distribution(real, support), _distribution(synth, support))


def column_wd(real, synth) -> float:
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.size == 0 or synth.size == 0:
        raise ValueError("cannot score an empty column")
    lo, hi = real.min(), real.max()
    if hi - lo <= 0:
        # degenerate range: everything maps to zero
        return 0.0
    return float(wasserstein_distance((real - lo) / (hi - lo), (synth - lo) / (hi - lo)))


@dataclass(frozen=True)
class ColumnScore:
    column: str
    kind: str
    score: float


@dataclass(frozen=True)
class SimilarityReport:
    per_column: tuple[ColumnScore, ...] = field(default_factory=tuple)

    def _mean(self, kind):
        scores = [c.score for c in self.per_column if c.kind == kind]
        return float(np.mean(scores)) if scores else None

    @property
    def avg_jsd(self) -> float | None:
        return self._mean(DISCRETE)

    @property
    def avg_wd(self) -> float | None:
        return self._mean(CONTINUOUS)

    def to_dict(self) -> dict:
        return {"avg_jsd": self.avg_jsd, "avg_wd": self.avg_wd,
                "per_column": [{"column": c.column, "kind": c.kind, "score": c.score}
                               for c in self.per_column]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["column", "kind", "score"])
        for c in self.per_column:
            w.writerow([c.column, c.kind, repr(c.score)])
        return buf.getvalue()


def _equalize(real: Table, synth: Table, seed: int) -> tuple[Table, Table]:
    n = min(real.n_rows, synth.n_rows)
    rng = np.random.default_rng(seed)
    if real.n_rows > n:
        real = real.take(np.sort(rng.choice(real.n_rows, n, replace=False)))
    if synth.n_rows > n:
        synth = synth.take(np.sort(rng.choice(synth.n_rows, n, replace=False)))
    return real, synth


def similarity_report(real: Table, synth: Table, seed: int = 0,
                      equalize: bool = True) -> SimilarityReport:
    if real.schema != synth.schema:
        raise SchemaError("real and synthetic tables have different schemas")
    if equalize:
        real, synth = _equalize(real, synth, seed)
    scores = []
    for col in real.schema.columns:
        fn = column_wd if col.kind == CONTINUOUS else column_jsd
        scores.append(ColumnScore(col.name, col.kind, fn(real[col.name], synth[col.name])))
    return SimilarityReport(tuple(scores))
