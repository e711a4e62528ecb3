"""Federated-averaging probe: a multinomial softmax classifier on featurized tables."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import log_softmax, softmax
from scipy.stats import rankdata

from .errors import ConfigError
from .ledger import DOWNLOAD, MODEL_ROUND, UPLOAD, CommLedger
from .synthesis import augment_client
from .table import Schema, Table
from .transforms import IcdmCodec, MdtCodec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Featurizer:
    """Global feature map shared by every client.

    Continuous columns are z-scored with the global mixture mean and std,
    discrete non-label columns one-hot over the global category set.
    """

    continuous: tuple[tuple[str, float, float], ...]
    discrete: tuple[tuple[str, tuple[str, ...]], ...]
    label: str
    classes: tuple[str, ...]

    @classmethod
    def from_codecs(cls, schema: Schema, mdt_codecs: Mapping[str, MdtCodec],
                    icdm_codecs: Mapping[str, IcdmCodec]) -> "Featurizer":
        cont = []
        for name in schema.continuous:
            c = mdt_codecs[name]
            mean = float(np.dot(c.pi, c.mu))
            var = float(np.dot(c.pi, c.sigma**2 + c.mu**2)) - mean**2
            cont.append((name, mean, float(np.sqrt(max(var, 1e-24)))))
        disc = [(name, tuple(sorted(map(str, icdm_codecs[name].categories))))
                for name in schema.discrete if name != schema.label]
        classes = tuple(sorted(map(str, icdm_codecs[schema.label].categories)))
        return cls(tuple(cont), tuple(disc), schema.label, classes)

    @property
    def dim(self) -> int:
        return len(self.continuous) + sum(len(c) for _, c in self.discrete)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def __call__(self, table: Table) -> tuple[np.ndarray, np.ndarray]:
        return featurize(table, self)


def featurize(table: Table, feat: Featurizer) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and integer labels; unseen categories become all-zero blocks."""
    n = table.n_rows
    x = np.zeros((n, feat.dim))
    col = 0
    for name, mean, std in feat.continuous:
        x[:, col] = (table[name] - mean) / std
        col += 1
    for name, cats in feat.discrete:
        lookup = {c: j for j, c in enumerate(cats)}
        idx = np.array([lookup.get(v, -1) for v in table[name].tolist()], dtype=np.intp)
        unseen = idx < 0
        if unseen.any():
            log.warning("column %r: %d rows with unseen categories mapped to zeros",
                        name, int(unseen.sum()))
        rows = np.nonzero(~unseen)[0]
        x[rows, col + idx[rows]] = 1.0
        col += len(cats)
    lookup = {c: j for j, c in enumerate(feat.classes)}
    try:
        y = np.array([lookup[v] for v in table[feat.label].tolist()], dtype=np.intp)
    except KeyError as exc:
        raise ConfigError(f"label {exc.args[0]!r} is not a known class") from None
    return x, y


@dataclass(frozen=True, eq=False)
class SoftmaxModel:
    weights: np.ndarray  # (dim + 1) x classes, last row is the bias

    @classmethod
    def zeros(cls, dim: int, n_classes: int) -> "SoftmaxModel":
        return cls(np.zeros((dim + 1, n_classes)))

    @property
    def scalar_count(self) -> int:
        return int(self.weights.size)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights[:-1] + self.weights[-1]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x), axis=1)


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 100
    local_epochs: int = 3
    learning_rate: float = 0.001
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0 or self.local_epochs < 0:
            raise ConfigError("rounds and local_epochs must be nonnegative")
        if not self.learning_rate > 0 or self.batch_size < 1:
            raise ConfigError("learning_rate and batch_size must be positive")

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "local_epochs": self.local_epochs,
                "learning_rate": self.learning_rate, "batch_size": self.batch_size,
                "seed": self.seed}


def loss_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the weight matrix."""
    n = x.shape[0]
    xb = np.hstack([x, np.ones((n, 1))])
    logp = log_softmax(xb @ weights, axis=1)
    loss = -float(logp[np.arange(n), y].mean())
    resid = np.exp(logp)
    resid[np.arange(n), y] -= 1.0
    return loss, xb.T @ resid / n


def local_update(model: SoftmaxModel, x: np.ndarray, y: np.ndarray, config: TrainConfig,
                 seed: int | Sequence[int] | None = None) -> SoftmaxModel:
    """``local_epochs`` passes of shuffled minibatch gradient descent."""
    w = model.weights.copy()
    n = x.shape[0]
    if n == 0:
        return SoftmaxModel(w)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            b = order[start:start + config.batch_size]
            _, g = loss_and_grad(w, x[b], y[b])
            w -= config.learning_rate * g
    return SoftmaxModel(w)


def fedavg_aggregate(models: Sequence[SoftmaxModel], counts: Sequence[float]) -> SoftmaxModel:
    if not models:
        raise ValueError("no models to aggregate")
    shape = models[0].weights.shape
    if any(m.weights.shape != shape for m in models):
        raise ValueError("client models have different shapes")
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape[0] != len(models) or counts.sum() <= 0:
        raise ValueError("counts must be positive and match the models")
    frac = counts / counts.sum()
    out = np.zeros(shape)
    for f, m in zip(frac, models):
        out += f * m.weights
    return SoftmaxModel(out)


def roc_auc(scores, labels) -> float:
    """Rank-based ROC-AUC with tied scores given their average rank."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(model: SoftmaxModel, x: np.ndarray, y: np.ndarray) -> dict:
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty test set")
    proba = model.predict_proba(x)
    out = {"accuracy": float(np.mean(np.argmax(proba, axis=1) == y))}
    if proba.shape[1] == 2:
        out["rocauc"] = roc_auc(proba[:, 1], y == 1)
    return out


@dataclass
class TrainResult:
    model: SoftmaxModel
    curve: list[dict] = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.curve[-1]


def train_federated(shards: Sequence[Table], test: Table, config: TrainConfig,
                    featurizer: Featurizer, synthetic: Sequence[Table] | None = None,
                    ledger: CommLedger | None = None, client_ids: Sequence[int] | None = None,
                    workers: int = 1) -> TrainResult:
    """FedAvg over all clients every round; ``synthetic`` tables are unioned in when given.

    Round 0 of the curve holds the metrics of the initial (all-zero) model.
    """
    if synthetic is not None:
        if len(synthetic) != len(shards):
            raise ValueError("need one synthetic table per shard")
        shards = [augment_client(s, t) for s, t in zip(shards, synthetic)]
    ids = list(range(len(shards))) if client_ids is None else list(client_ids)
    data = [(featurizer(s), cid) for s, cid in zip(shards, ids) if s.n_rows > 0]
    counts = [xy[0].shape[0] for xy, _ in data]
    x_test, y_test = featurizer(test)
    model = SoftmaxModel.zeros(featurizer.dim, featurizer.n_classes)
    curve = [{"round": 0, **evaluate(model, x_test, y_test)}]

    def client_step(item, global_model, r):
        (x, y), cid = item
        return local_update(global_model, x, y, config, seed=[config.seed, r, cid])

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for r in range(1, config.rounds + 1):
            if ledger is not None:
                for _, cid in data:
                    ledger.record(MODEL_ROUND, DOWNLOAD, cid, model.scalar_count)
            if pool is None:
                local = [client_step(item, model, r) for item in data]
            else:
                local = list(pool.map(lambda it, m=model, rr=r: client_step(it, m, rr), data))
            if ledger is not None:
                for _, cid in data:
                    ledger.record(MODEL_ROUND, UPLOAD, cid, model.scalar_count)
            model = fedavg_aggregate(local, counts)
            curve.append({"round": r, **evaluate(model, x_test, y_test)})
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(model, curve)
