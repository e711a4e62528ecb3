"""Covariance-constrained synthesis from shared statistics only.

Rows are drawn as ``X' = L U^T`` with ``L`` i.i.d. standard normal, so the
sample covariance of ``X'`` converges to ``U U^T``. Each encoded column is then
decoded through its codec. Nothing here ever sees a client's rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .covariance import CholFactor
from .errors import ContractError, SchemaError
from .table import Schema, Table, concat_tables
from .transforms import IcdmCodec, MdtCodec, build_layout, decode_matrix

BLOCK_ROWS = 65536


@dataclass(frozen=True)
class SynthesisRequest:
    n_rows: int
    seed: int
    schema: Schema

    def __post_init__(self):
        if int(self.n_rows) < 1:
            raise ValueError(f"n_rows must be >= 1, got {self.n_rows}")


def derive_seed(seed: int, *keys: int) -> int:
    """Reproducible 63-bit seed for the stream named by ``keys`` under ``seed``."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def client_seed(seed: int, client_id: int) -> int:
    """Independent, reproducible per-client synthesis seed."""
    return derive_seed(seed, client_id)


def sample_encoded(chol: CholFactor, n_rows: int, seed: int) -> np.ndarray:
    """Draw ``n_rows`` encoded rows with covariance ``U U^T``.

    Rows are produced in fixed-size blocks, each with its own generator keyed
    on (seed, block index), so blocks are independent of one another.
    """
    u = np.asarray(chol.u)
    l = u.shape[0]
    out = np.empty((n_rows, l))
    for b, start in enumerate(range(0, n_rows, BLOCK_ROWS)):
        stop = min(start + BLOCK_ROWS, n_rows)
        rng = np.random.default_rng([int(seed), b])
        noise = rng.standard_normal((stop - start, l))
        out[start:stop] = noise @ u.T
    return out


def synthesize(mdt_codecs: Mapping[str, MdtCodec], icdm_codecs: Mapping[str, IcdmCodec],
               chol: CholFactor, request: SynthesisRequest,
               clip_ranges: Mapping[str, tuple[float, float]] | None = None) -> Table:
    """Sample a synthetic table conforming to ``request.schema``.

    ``clip_ranges`` optionally clips continuous outputs to a (min, max) per
    column; by default the affine decode is left untouched.
    """
    schema = request.schema
    l = len(build_layout(schema))
    if chol.u.shape != (l, l):
        raise ContractError(f"factor is {chol.u.shape}, layout needs ({l}, {l})")
    missing = [c for c in schema.continuous if c not in mdt_codecs]
    missing += [c for c in schema.discrete if c not in icdm_codecs]
    if missing:
        raise ContractError(f"no codec for columns {missing}")
    encoded = sample_encoded(chol, int(request.n_rows), request.seed)
    table = decode_matrix(encoded, schema, mdt_codecs, icdm_codecs)
    if clip_ranges:
        data = {name: table[name] for name in schema.names}
        for name, (lo, hi) in clip_ranges.items():
            data[name] = np.clip(data[name], lo, hi)
        table = Table(schema, data)
    return table


def augment_client(local: Table, synthetic: Table) -> Table:
    """Union of local and synthetic rows; synthetic rows are flagged."""
    if local.schema != synthetic.schema:
        raise SchemaError("local and synthetic tables have different schemas")
    flagged = Table(synthetic.schema, {n: synthetic[n] for n in synthetic.schema.names},
                    np.ones(synthetic.n_rows, dtype=bool))
    return concat_tables([local, flagged])
