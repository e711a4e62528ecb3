"""The persisted statistics bundle that fully determines synthesis."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import CholFactor, DpParams, GlobalCovariance
from .errors import ContractError
from .gmm import GmmPosterior
from .table import Schema
from .transforms import IcdmCodec, MdtCodec, build_layout

VERSION = "fedtab-stats/1"


def _matrix(a: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(a)]


@dataclass(frozen=True, eq=False)
class StatsArtifact:
    schema: Schema
    posteriors: dict[str, GmmPosterior]
    icdm: dict[str, IcdmCodec]
    covariance: GlobalCovariance
    chol: CholFactor
    dp: DpParams
    lam: float
    mode_policy: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        l = len(self.layout)
        if set(self.posteriors) != set(self.schema.continuous):
            raise ContractError("mixture posteriors do not match the continuous columns")
        if set(self.icdm) != set(self.schema.discrete):
            raise ContractError("category codecs do not match the discrete columns")
        for name, mat in (("covariance", self.covariance.sigma), ("factor", self.chol.u)):
            if np.shape(mat) != (l, l):
                raise ContractError(f"{name} is {np.shape(mat)}, layout needs ({l}, {l})")

    @property
    def layout(self) -> tuple:
        return build_layout(self.schema)

    @property
    def ranges(self) -> dict[str, tuple[float, float]]:
        return {n: p.data_range for n, p in self.posteriors.items()}

    @property
    def mdt_codecs(self) -> dict[str, MdtCodec]:
        return {name: MdtCodec.from_posterior(p, self.mode_policy, self.lam)
                for name, p in self.posteriors.items()}

    def to_dict(self) -> dict:
        mdt = self.mdt_codecs
        return {
            "version": VERSION,
            "schema": self.schema.to_dict(),
            "l": len(self.layout),
            "layout": [list(x) for x in self.layout],
            "lambda": self.lam,
            "mode_policy": self.mode_policy,
            "gmm": {name: {**p.to_dict(), "mode_codec": mdt[name].mode_codec.to_dict()}
                    for name, p in self.posteriors.items()},
            "icdm": {name: c.to_dict() for name, c in self.icdm.items()},
            "covariance": {"sigma": _matrix(self.covariance.sigma),
                           "clamped": self.covariance.clamped,
                           "clamp_count": self.covariance.clamp_count},
            "cholesky": {"u": _matrix(self.chol.u), "repaired": _matrix(self.chol.repaired),
                         "repair_shift": self.chol.repair_shift},
            "dp": self.dp.to_dict(),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "StatsArtifact":
        if obj.get("version") != VERSION:
            raise ContractError(f"unsupported artifact version {obj.get('version')!r}")
        schema = Schema.from_dict(obj["schema"])
        if [list(x) for x in build_layout(schema)] != obj["layout"]:
            raise ContractError("artifact layout does not match its schema")
        dp = obj["dp"]
        eps = math.inf if dp["epsilon"] is None else dp["epsilon"]
        cov = obj["covariance"]
        ch = obj["cholesky"]
        return cls(
            schema=schema,
            posteriors={n: GmmPosterior.from_dict(g) for n, g in obj["gmm"].items()},
            icdm={n: IcdmCodec.from_dict(c) for n, c in obj["icdm"].items()},
            covariance=GlobalCovariance(np.array(cov["sigma"], dtype=np.float64).reshape(
                obj["l"], obj["l"]), cov["clamped"], cov["clamp_count"]),
            chol=CholFactor(np.array(ch["u"], dtype=np.float64).reshape(obj["l"], obj["l"]),
                            np.array(ch["repaired"], dtype=np.float64).reshape(obj["l"], obj["l"]),
                            ch["repair_shift"]),
            dp=DpParams(eps, dp["delta"], dp["sensitivity"], dp["seed"]),
            lam=obj["lambda"], mode_policy=obj["mode_policy"], meta=obj.get("meta", {}))

    @classmethod
    def from_json(cls, text: str | bytes) -> "StatsArtifact":
        return cls.from_dict(json.loads(text))
