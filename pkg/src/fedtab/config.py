"""JSON run configuration.

All keys are optional except ``data`` and ``schema``. Relative paths are
resolved against the directory holding the config file. Defaults::

    {
      "data": "<csv path>",
      "schema": "<schema json path>",
      "output_dir": "out",
      "seed": 0,
      "workers": 1,
      "partition": {"num_clients": 5, "beta": 0.5, "test_fraction": 0.2},
      "gmm": {"t_max": 10, "alpha0": null, "beta0": 1.0, "m0": 0.0, "w0": 1.0,
              "nu0": 3.0, "conv_eps": 1e-4, "max_rounds": 1000,
              "prune_threshold": 0.005, "sigma_floor": 1e-6, "accelerate": true},
      "lambda": 1e-4,
      "mode_policy": "sample_responsibility",
      "dp": {"epsilon": null, "delta": 1e-4},
      "synthesis": {"rows_per_client": null, "clip": false},
      "train": {"rounds": 100, "local_epochs": 3, "learning_rate": 0.001,
                "batch_size": 64}
    }

``epsilon: null`` means no noise. ``rows_per_client: null`` synthesizes as
many rows as each client holds.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .gmm import GmmPrior
from .table import PartitionPlan
from .train import TrainConfig
from .transforms import ARGMAX, DEFAULT_LAMBDA, SAMPLE

_TOP_KEYS = {"data", "schema", "output_dir", "seed", "workers", "partition", "gmm", "lambda",
             "mode_policy", "dp", "synthesis", "train"}


@dataclass(frozen=True)
class PipelineConfig:
    data: Path | None = None
    schema: Path | None = None
    output_dir: Path = Path("out")
    seed: int = 0
    workers: int = 1
    num_clients: int = 5
    beta: float = 0.5
    test_fraction: float = 0.2
    gmm: GmmPrior = field(default_factory=GmmPrior)
    lam: float = DEFAULT_LAMBDA
    mode_policy: str = SAMPLE
    epsilon: float = math.inf
    delta: float = 1e-4
    rows_per_client: int | None = None
    clip: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode_policy not in (SAMPLE, ARGMAX):
            raise ConfigError(f"unknown mode_policy {self.mode_policy!r}")
        if not 0.0 < self.lam < 0.5:
            raise ConfigError(f"lambda must lie in (0, 0.5), got {self.lam}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.rows_per_client is not None and self.rows_per_client < 1:
            raise ConfigError("rows_per_client must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        PartitionPlan(self.beta, self.num_clients, self.seed)

    @property
    def partition_plan(self) -> PartitionPlan:
        return PartitionPlan(self.beta, self.num_clients, self.seed)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=int(seed), train=replace(self.train, seed=int(seed)))

    def check_files(self) -> None:
        for label, path in (("data", self.data), ("schema", self.schema)):
            if path is None:
                raise ConfigError(f"config is missing the {label!r} path")
            if not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")

    def to_dict(self) -> dict:
        return {
            "data": None if self.data is None else str(self.data),
            "schema": None if self.schema is None else str(self.schema),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "workers": self.workers,
            "partition": {"num_clients": self.num_clients, "beta": self.beta,
                          "test_fraction": self.test_fraction},
            "gmm": self.gmm.to_dict(),
            "lambda": self.lam,
            "mode_policy": self.mode_policy,
            "dp": {"epsilon": None if math.isinf(self.epsilon) else self.epsilon,
                   "delta": self.delta},
            "synthesis": {"rows_per_client": self.rows_per_client, "clip": self.clip},
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
        }

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | os.PathLike = ".") -> "PipelineConfig":
        unknown = set(obj) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        base = Path(base_dir)

        def path(key, default=None):
            value = obj.get(key, default)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        part = obj.get("partition", {})
        dp = obj.get("dp", {})
        syn = obj.get("synthesis", {})
        seed = int(obj.get("seed", 0))
        try:
            gmm = GmmPrior(**obj.get("gmm", {}))
            train = TrainConfig(**obj.get("train", {}), seed=seed)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        eps = dp.get("epsilon")
        return cls(
            data=path("data"), schema=path("schema"), output_dir=path("output_dir", "out"),
            seed=seed, workers=int(obj.get("workers", 1)),
            num_clients=int(part.get("num_clients", 5)), beta=float(part.get("beta", 0.5)),
            test_fraction=float(part.get("test_fraction", 0.2)),
            gmm=gmm, lam=float(obj.get("lambda", DEFAULT_LAMBDA)),
            mode_policy=obj.get("mode_policy", SAMPLE),
            epsilon=math.inf if eps is None else float(eps), delta=float(dp.get("delta", 1e-4)),
            rows_per_client=syn.get("rows_per_client"), clip=bool(syn.get("clip", False)),
            train=train)


def load_config(path: str | os.PathLike) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return PipelineConfig.from_dict(obj, path.parent)
