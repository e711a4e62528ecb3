"""Column codecs mapping raw cells to (approximately) standard-normal reals and back.

* ``IcdmCodec`` places each category on a slice of the standard normal whose
  probability mass equals the category's global frequency. Categories are
  ordered by ascending frequency, ties broken on the token string, and the
  slices tile [lam, 1 - lam] in probability space.
* ``MdtCodec`` turns a continuous value into a within-mode z-score ``a`` and a
  mode index ``t`` under a fitted mixture. The mode index is itself encoded
  with an ``IcdmCodec`` whose frequencies are the mixture weights.

Mode indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, DecodingError, EncodingError
from .gmm import GmmPosterior
from .table import Schema, Table

DEFAULT_LAMBDA = 1e-4
SAMPLE = "sample_responsibility"
ARGMAX = "argmax"


def inverse_normal_cdf(p):
    return ndtri(p)


def normal_cdf(x):
    return ndtr(x)


def _sort_key(item):
    category, freq = item
    return (freq, str(category))


@dataclass(frozen=True, eq=False)
class IcdmCodec:
    categories: tuple
    frequencies: np.ndarray
    bounds: np.ndarray
    lam: float = DEFAULT_LAMBDA
    z_bounds: np.ndarray = field(init=False, repr=False)
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        bounds = np.asarray(self.bounds, dtype=np.float64)
        freqs.setflags(write=False)
        bounds.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "bounds", bounds)
        z = ndtri(bounds)
        z.setflags(write=False)
        object.__setattr__(self, "z_bounds", z)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.categories)})

    def __len__(self):
        return len(self.categories)

    def index_of(self, category) -> int:
        try:
            return self._index[category]
        except KeyError:
            raise EncodingError(f"unknown category {category!r}") from None

    def interval(self, category) -> tuple[float, float]:
        j = self.index_of(category)
        return float(self.bounds[j]), float(self.bounds[j + 1])

    def encode_indices(self, idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Encode category positions: uniform in probability space, then inverse CDF."""
        idx = np.asarray(idx, dtype=np.intp)
        lo, hi = self.bounds[idx], self.bounds[idx + 1]
        u = lo + rng.random(idx.shape[0]) * (hi - lo)
        v = ndtri(u)
        # pin into the half-open slice [z_j, z_{j+1}) so decoding is exact
        upper = np.nextafter(self.z_bounds[idx + 1], -np.inf)
        return np.minimum(np.maximum(v, self.z_bounds[idx]), upper)

    def encode(self, values: Sequence, rng: np.random.Generator, column: str = "?") -> np.ndarray:
        values = np.asarray(values)
        if values.size == 0:
            return np.empty(0)
        uniq, inverse = np.unique(values, return_inverse=True)
        lookup = np.empty(uniq.shape[0], dtype=np.intp)
        for k, u in enumerate(uniq):
            key = u.item() if hasattr(u, "item") else u
            if key not in self._index:
                raise EncodingError(f"column {column!r}: unknown category {key!r}")
            lookup[k] = self._index[key]
        return self.encode_indices(lookup[inverse.reshape(-1)], rng)

    def decode_indices(self, values) -> np.ndarray:
        return np.searchsorted(self.z_bounds[1:-1], np.asarray(values, dtype=np.float64),
                               side="right")

    def decode(self, values) -> np.ndarray:
        idx = self.decode_indices(values)
        cats = np.empty(len(self.categories), dtype=object)
        cats[:] = self.categories
        return cats[idx]

    def to_dict(self) -> dict:
        return {"lambda": self.lam,
                "categories": [{"category": c, "frequency": float(self.frequencies[j]),
                                "q_low": float(self.bounds[j]), "q_high": float(self.bounds[j + 1])}
                               for j, c in enumerate(self.categories)]}

    @classmethod
    def from_dict(cls, obj: dict) -> "IcdmCodec":
        cats = obj["categories"]
        bounds = [cats[0]["q_low"]] + [c["q_high"] for c in cats]
        return cls(tuple(c["category"] for c in cats), [c["frequency"] for c in cats], bounds,
                   obj["lambda"])


def build_icdm(frequencies: Mapping[Hashable, float], lam: float = DEFAULT_LAMBDA) -> IcdmCodec:
    """Build the codec from global category frequencies (or raw counts)."""
    if not frequencies:
        raise ConfigError("cannot build a codec for an empty category set")
    if not 0.0 < lam < 0.5:
        raise ConfigError(f"lambda must lie in (0, 0.5), got {lam}")
    items = sorted(frequencies.items(), key=_sort_key)
    freqs = np.array([f for _, f in items], dtype=np.float64)
    if np.any(~(freqs > 0)) or not np.all(np.isfinite(freqs)):
        raise ConfigError("category frequencies must be positive and finite")
    freqs = freqs / freqs.sum()
    bounds = lam + (1.0 - 2.0 * lam) * np.concatenate([[0.0], np.cumsum(freqs)])
    bounds[0], bounds[-1] = lam, 1.0 - lam
    return IcdmCodec(tuple(c for c, _ in items), freqs, bounds, lam)


def icdm_encode(category, codec: IcdmCodec, rng: np.random.Generator) -> float:
    return float(codec.encode_indices(np.array([codec.index_of(category)]), rng)[0])


def icdm_decode(value: float, codec: IcdmCodec):
    return codec.categories[int(codec.decode_indices(np.array([value]))[0])]


@dataclass(frozen=True, eq=False)
class MdtCodec:
    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    policy: str = SAMPLE
    lam: float = DEFAULT_LAMBDA
    mode_codec: IcdmCodec = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("pi", "mu", "sigma"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.pi.shape[0] < 1:
            raise ConfigError("mixture codec needs at least one mode")
        if np.any(self.sigma <= 0):
            raise ConfigError("mode standard deviations must be positive")
        if self.policy not in (SAMPLE, ARGMAX):
            raise ConfigError(f"unknown mode assignment policy {self.policy!r}")
        object.__setattr__(self, "mode_codec",
                           build_icdm({t: float(p) for t, p in enumerate(self.pi)}, self.lam))

    @classmethod
    def from_posterior(cls, posterior: GmmPosterior, policy: str = SAMPLE,
                       lam: float = DEFAULT_LAMBDA) -> "MdtCodec":
        return cls(posterior.pi, posterior.mu, posterior.sigma, policy, lam)

    @property
    def n_modes(self) -> int:
        return int(self.pi.shape[0])

    def mode_posterior(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64)[:, None]
        logp = np.log(self.pi) - np.log(self.sigma) - 0.5 * ((x - self.mu) / self.sigma) ** 2
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)

    def encode(self, values, rng: np.random.Generator | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise EncodingError("non-finite value passed to the mixture encoder")
        if x.size == 0:
            return np.empty(0), np.empty(0, dtype=np.intp)
        post = self.mode_posterior(x)
        if self.policy == ARGMAX:
            t = np.argmax(post, axis=1)
        else:
            if rng is None:
                raise EncodingError("responsibility sampling needs a random generator")
            cum = np.cumsum(post, axis=1)
            u = rng.random(x.shape[0])[:, None] * cum[:, -1:]
            t = np.minimum((u >= cum).sum(axis=1), self.n_modes - 1)
        a = (x - self.mu[t]) / self.sigma[t]
        return a, t

    def decode(self, a, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 0 or t.max() >= self.n_modes):
            raise DecodingError(f"mode index out of range [0, {self.n_modes})")
        return np.asarray(a, dtype=np.float64) * self.sigma[t] + self.mu[t]

    def encode_modes(self, t, rng: np.random.Generator) -> np.ndarray:
        """Encode mode indices through the mode-indicator codec."""
        slot = np.empty(self.n_modes, dtype=np.intp)
        slot[np.asarray(self.mode_codec.categories, dtype=np.intp)] = np.arange(self.n_modes)
        return self.mode_codec.encode_indices(slot[np.asarray(t, dtype=np.intp)], rng)

    def decode_modes(self, values) -> np.ndarray:
        order = np.asarray(self.mode_codec.categories, dtype=np.intp)
        return order[self.mode_codec.decode_indices(values)]

    def to_dict(self) -> dict:
        return {"policy": self.policy, "lambda": self.lam}


def mdt_encode(value: float, codec: MdtCodec, rng: np.random.Generator | None = None
               ) -> tuple[float, int]:
    a, t = codec.encode(np.array([value]), rng)
    return float(a[0]), int(t[0])


def mdt_decode(a: float, t: int, codec: MdtCodec) -> float:
    return float(codec.decode(np.array([a]), np.array([t]))[0])


@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    values: np.ndarray
    layout: tuple

    @property
    def width(self) -> int:
        return len(self.layout)

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])


def build_layout(schema: Schema) -> tuple:
    """[(a, c1), (b, c1), ..., (a, cn), (b, cn), (d, d1), ..., (d, dm)]."""
    layout = []
    for name in schema.continuous:
        layout += [("a", name), ("b", name)]
    layout += [("d", name) for name in schema.discrete]
    return tuple(layout)


def _column_streams(rng, n):
    if isinstance(rng, np.random.Generator):
        return [rng] * n
    return [np.random.default_rng(s) for s in np.random.SeedSequence(rng).spawn(n)]


def encode_table(table: Table, mdt_codecs: Mapping[str, MdtCodec],
                 icdm_codecs: Mapping[str, IcdmCodec],
                 rng: np.random.Generator | int = 0) -> EncodedMatrix:
    """Encode a table into its N x (2 n_c + n_d) representation.

    An integer ``rng`` is expanded into one independent stream per source
    column, so a column's encoding does not depend on the others.
    """
    schema = table.schema
    layout = build_layout(schema)
    streams = _column_streams(rng, len(schema.continuous) + len(schema.discrete))
    out = np.empty((table.n_rows, len(layout)), dtype=np.float64)
    col = 0
    for k, name in enumerate(schema.continuous):
        codec = mdt_codecs[name]
        a, t = codec.encode(table[name], streams[k])
        out[:, col] = a
        out[:, col + 1] = codec.encode_modes(t, streams[k])
        col += 2
    offset = len(schema.continuous)
    for k, name in enumerate(schema.discrete):
        out[:, col] = icdm_codecs[name].encode(table[name], streams[offset + k], column=name)
        col += 1
    return EncodedMatrix(out, layout)


def decode_matrix(values: np.ndarray, schema: Schema, mdt_codecs: Mapping[str, MdtCodec],
                  icdm_codecs: Mapping[str, IcdmCodec]) -> Table:
    """Inverse of ``encode_table`` up to the randomness of the encoding."""
    values = np.asarray(values, dtype=np.float64)
    layout = build_layout(schema)
    if values.ndim != 2 or values.shape[1] != len(layout):
        raise DecodingError(f"expected {len(layout)} encoded columns, got shape {values.shape}")
    data = {}
    col = 0
    for name in schema.continuous:
        codec = mdt_codecs[name]
        data[name] = codec.decode(values[:, col], codec.decode_modes(values[:, col + 1]))
        col += 2
    for name in schema.discrete:
        data[name] = icdm_codecs[name].decode(values[:, col]).astype(str)
        col += 1
    return Table(schema, data)


def category_counts(values) -> dict[str, int]:
    uniq, counts = np.unique(np.asarray(values).astype(str), return_counts=True)
    return {str(u): int(c) for u, c in zip(uniq, counts)}


__all__ = [
    "ARGMAX", "SAMPLE", "DEFAULT_LAMBDA", "EncodedMatrix", "IcdmCodec", "MdtCodec",
    "build_icdm", "build_layout", "category_counts", "decode_matrix", "encode_table",
    "icdm_decode", "icdm_encode", "inverse_normal_cdf", "mdt_decode", "mdt_encode", "normal_cdf",
]
