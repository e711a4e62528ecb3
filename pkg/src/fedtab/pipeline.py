"""End-to-end driver: partition, fit the shared statistics, synthesize, evaluate.

Federation is simulated in-process. ``ClientContext`` owns a shard and only
ever hands out statistics; ``ServerContext`` never receives a ``Table``. Every
message crossing the boundary is recorded in the ``CommLedger``.
"""
from __future__ import annotations

import contextlib
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy

from . import __version__
from . import ledger as L
from .artifact import StatsArtifact
from .config import PipelineConfig
from .covariance import (DpParams, LocalMoments, add_dp_noise, aggregate_covariance,
                         local_moments, psd_cholesky)
from .errors import FedTabError, PhaseError, ProtocolError
from .gmm import GmmColumnClient, GmmPosterior, run_gmm_protocol
from .metrics import SimilarityReport, similarity_report
from .synthesis import SynthesisRequest, client_seed, derive_seed, synthesize
from .table import (Schema, Table, concat_tables, dirichlet_partition, read_table,
                    load_schema, train_test_split)
from .train import Featurizer, TrainResult, train_federated
from .transforms import (IcdmCodec, MdtCodec, build_icdm, build_layout, category_counts,
                         encode_table)

ENCODE_STREAM = 1
DP_STREAM = 2
EVAL_STREAM = 3


@contextlib.contextmanager
def phase(name: str):
    """Tag any error escaping the block with the pipeline phase it came from."""
    try:
        yield
    except PhaseError:
        raise
    except (FedTabError, ValueError, ArithmeticError, OSError, KeyError) as exc:
        raise PhaseError(name, exc) from exc


class ClientContext:
    """One simulated client. Holds raw rows; every method returns statistics only."""

    def __init__(self, client_id: int, table: Table):
        self.client_id = int(client_id)
        self._table = table

    @property
    def n_rows(self) -> int:
        return self._table.n_rows

    def mixture_client(self, column: str) -> GmmColumnClient:
        return GmmColumnClient(self._table[column])

    def vocabulary(self, column: str) -> list[str]:
        return sorted(set(self._table[column].tolist()))

    def category_counts(self, column: str, vocabulary: Sequence[str]) -> np.ndarray:
        lookup = {c: j for j, c in enumerate(vocabulary)}
        counts = np.zeros(len(vocabulary))
        for v in self._table[column].tolist():
            counts[lookup[v]] += 1
        return counts

    def moments(self, mdt: dict[str, MdtCodec], icdm: dict[str, IcdmCodec],
                seed: int) -> LocalMoments:
        encoded = encode_table(self._table, mdt, icdm, derive_seed(seed, ENCODE_STREAM,
                                                                    self.client_id))
        return local_moments(encoded.values)

    def synthesize(self, artifact: StatsArtifact, n_rows: int, seed: int,
                   clip: bool = False) -> Table:
        request = SynthesisRequest(n_rows, client_seed(seed, self.client_id), artifact.schema)
        return synthesize(artifact.mdt_codecs, artifact.icdm, artifact.chol, request,
                          artifact.ranges if clip else None)


class ServerContext:
    """Aggregates client statistics. Has no access to any client's rows."""

    def __init__(self, schema: Schema, config: PipelineConfig, ledger: L.CommLedger):
        self.schema = schema
        self.config = config
        self.ledger = ledger

    def fit_mixture(self, clients: Sequence[GmmColumnClient], ids: Sequence[int]
                    ) -> GmmPosterior:
        post = run_gmm_protocol(clients, self.config.gmm, self.ledger, ids)
        for cid in ids:
            # final weights, means and spreads of the kept modes
            self.ledger.record(L.GMM_BROADCAST, L.DOWNLOAD, cid, 3 * post.n_modes)
        return post

    def merge_vocabularies(self, vocabs: dict[int, list[str]]) -> list[str]:
        merged = sorted(set().union(*vocabs.values()))
        size = sum(len(tok.encode("utf-8")) for tok in merged)
        for cid, vocab in vocabs.items():
            self.ledger.record(L.FREQUENCY, L.UPLOAD, cid, 0,
                               sum(len(tok.encode("utf-8")) for tok in vocab))
            self.ledger.record(L.FREQUENCY, L.DOWNLOAD, cid, 0, size)
        return merged

    def global_frequencies(self, vocabulary: list[str], counts: dict[int, np.ndarray]
                           ) -> tuple[IcdmCodec, dict[int, int]]:
        total = np.zeros(len(vocabulary))
        for cid, c in counts.items():
            if c.shape != total.shape:
                raise ProtocolError(f"client {cid} sent {c.shape[0]} counts, "
                                    f"expected {total.shape[0]}")
            self.ledger.record(L.FREQUENCY, L.UPLOAD, cid, c.shape[0])
            total += c
        for cid in counts:
            self.ledger.record(L.FREQUENCY, L.DOWNLOAD, cid, len(vocabulary))
        freqs = {tok: total[j] / total.sum() for j, tok in enumerate(vocabulary)}
        rows = {cid: int(round(c.sum())) for cid, c in counts.items()}
        return build_icdm(freqs, self.config.lam), rows

    def covariance(self, moments: dict[int, LocalMoments], rows: dict[int, int]):
        l = len(build_layout(self.schema))
        for cid, mo in moments.items():
            self.ledger.record(L.MOMENTS, L.UPLOAD, cid, mo.scalar_count)
            if mo.count != rows[cid]:
                raise ProtocolError(f"client {cid} moments cover {mo.count} rows, "
                                    f"frequency phase reported {rows[cid]}")
        cov = aggregate_covariance([moments[cid] for cid in sorted(moments)])
        dp = DpParams(self.config.epsilon, self.config.delta,
                      seed=derive_seed(self.config.seed, DP_STREAM))
        cov = add_dp_noise(cov, dp)
        for cid in moments:
            self.ledger.record(L.COVARIANCE_BROADCAST, L.DOWNLOAD, cid, l * l)
        return cov, psd_cholesky(cov.sigma), dp


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def partition(table: Table, config: PipelineConfig) -> tuple[list[Table], Table]:
    train, test = train_test_split(table, config.test_fraction, config.seed)
    return dirichlet_partition(train, config.partition_plan), test


def fit_statistics(shards: Sequence[Table], config: PipelineConfig,
                   ledger: L.CommLedger | None = None) -> StatsArtifact:
    """Run the statistics protocol over ``shards``; empty shards sit out."""
    ledger = ledger if ledger is not None else L.CommLedger()
    if not shards:
        raise ProtocolError("no clients")
    schema = shards[0].schema
    clients = [ClientContext(k, s) for k, s in enumerate(shards) if s.n_rows > 0]
    if not clients:
        raise ProtocolError("every client is empty")
    ids = [c.client_id for c in clients]
    server = ServerContext(schema, config, ledger)

    with phase("gmm"):
        posteriors = {name: server.fit_mixture([c.mixture_client(name) for c in clients], ids)
                      for name in schema.continuous}

    with phase("frequency"):
        icdm, rows = {}, {}
        for name in schema.discrete:
            vocab = server.merge_vocabularies({c.client_id: c.vocabulary(name) for c in clients})
            counts = {c.client_id: c.category_counts(name, vocab) for c in clients}
            icdm[name], col_rows = server.global_frequencies(vocab, counts)
            if name == schema.label:
                rows = col_rows

    with phase("moments"):
        mdt = {name: MdtCodec.from_posterior(p, config.mode_policy, config.lam)
               for name, p in posteriors.items()}
        moments = _map(lambda c: (c.client_id, c.moments(mdt, icdm, config.seed)), clients,
                       config.workers)

    with phase("covariance"):
        cov, chol, dp = server.covariance(dict(moments), rows)

    meta = {
        "seed": config.seed,
        "client_ids": ids,
        "client_rows": [rows[cid] for cid in ids],
        "gmm_prior": config.gmm.to_dict(),
        "gmm_rounds": {name: p.rounds for name, p in posteriors.items()},
        "gmm_modes_fitted": config.gmm.t_max,
    }
    return StatsArtifact(schema, posteriors, icdm, cov, chol, dp, config.lam,
                         config.mode_policy, meta)


def synthesize_clients(artifact: StatsArtifact, shards: Sequence[Table],
                       config: PipelineConfig) -> dict[int, Table]:
    """One synthetic table per non-empty client, sized ``rows_per_client`` or N_k."""
    clients = [ClientContext(k, s) for k, s in enumerate(shards) if s.n_rows > 0]

    def run(c: ClientContext):
        n = config.rows_per_client or c.n_rows
        return c.client_id, c.synthesize(artifact, n, config.seed, config.clip)

    with phase("synthesize"):
        return dict(_map(run, clients, config.workers))


def closed_form_report(artifact: StatsArtifact, ledger: L.CommLedger) -> dict:
    """Measured scalar counts next to the closed-form cost model for the same run."""
    schema = artifact.schema
    k = len(artifact.meta["client_ids"])
    rounds = list(artifact.meta["gmm_rounds"].values())
    avg_rounds = float(np.mean(rounds)) if rounds else 0.0
    cats = [len(artifact.icdm[n]) for n in schema.discrete]
    avg_cats = float(np.mean(cats)) if cats else 0.0
    formulas = L.closed_form_costs(k, schema.n_continuous, schema.n_discrete, avg_cats,
                                   artifact.meta["gmm_modes_fitted"], avg_rounds)
    summary = ledger.summarize()
    measured = {d: {p: v[d]["scalars"] for p, v in summary["phases"].items()}
                for d in (L.UPLOAD, L.DOWNLOAD)}
    modelled = {L.UPLOAD: (L.GMM_ROUND, L.FREQUENCY, L.MOMENTS),
                L.DOWNLOAD: (L.GMM_ROUND, L.FREQUENCY, L.COVARIANCE_BROADCAST)}
    return {
        "parameters": {"K": k, "n_c": schema.n_continuous, "n_d": schema.n_discrete,
                       "p": avg_cats, "t": artifact.meta["gmm_modes_fitted"], "m": avg_rounds,
                       "l": len(artifact.layout)},
        "closed_form": formulas,
        "measured": measured,
        "measured_modelled_total": {d: sum(measured[d].get(p, 0) for p in ps)
                                    for d, ps in modelled.items()},
        "measured_grand_total": {d: summary["total"][d]["scalars"]
                                 for d in (L.UPLOAD, L.DOWNLOAD)},
    }


@dataclass
class Evaluation:
    similarity: SimilarityReport
    raw: TrainResult
    augmented: TrainResult

    def curves_csv(self) -> str:
        binary = "rocauc" in self.raw.curve[0]
        cols = ["round", "raw_accuracy", "augmented_accuracy"]
        if binary:
            cols += ["raw_rocauc", "augmented_rocauc"]
        lines = [",".join(cols)]
        for r, a in zip(self.raw.curve, self.augmented.curve):
            cells = [str(r["round"]), repr(r["accuracy"]), repr(a["accuracy"])]
            if binary:
                cells += [repr(r["rocauc"]), repr(a["rocauc"])]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"similarity": {"avg_jsd": self.similarity.avg_jsd,
                               "avg_wd": self.similarity.avg_wd},
                "raw_final": self.raw.final, "augmented_final": self.augmented.final}


def evaluate_run(artifact: StatsArtifact, shards: Sequence[Table], test: Table,
                 synthetic: dict[int, Table], config: PipelineConfig,
                 ledger: L.CommLedger | None = None) -> Evaluation:
    live = [(k, s) for k, s in enumerate(shards) if s.n_rows > 0]
    featurizer = Featurizer.from_codecs(artifact.schema, artifact.mdt_codecs, artifact.icdm)
    with phase("similarity"):
        real = concat_tables([s for _, s in live])
        synth = concat_tables([synthetic[k] for k, _ in live])
        sim = similarity_report(real, synth, seed=derive_seed(config.seed, EVAL_STREAM))
    with phase("train"):
        ids = [k for k, _ in live]
        raw = train_federated([s for _, s in live], test, config.train, featurizer,
                              client_ids=ids, workers=config.workers)
        aug = train_federated([s for _, s in live], test, config.train, featurizer,
                              synthetic=[synthetic[k] for k in ids], ledger=ledger,
                              client_ids=ids, workers=config.workers)
    return Evaluation(sim, raw, aug)


@dataclass
class PipelineResult:
    shards: list[Table]
    test: Table
    artifact: StatsArtifact
    synthetic: dict[int, Table]
    evaluation: Evaluation | None
    ledger: L.CommLedger


def run_in_memory(table: Table, config: PipelineConfig, evaluate: bool = True
                  ) -> PipelineResult:
    """Whole pipeline on an in-memory table, no files touched."""
    ledger = L.CommLedger()
    with phase("partition"):
        shards, test = partition(table, config)
    artifact = fit_statistics(shards, config, ledger)
    synthetic = synthesize_clients(artifact, shards, config)
    evaluation = evaluate_run(artifact, shards, test, synthetic, config, ledger) \
        if evaluate else None
    return PipelineResult(shards, test, artifact, synthetic, evaluation, ledger)


# ---- file-backed stages ----

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _update_manifest(config: PipelineConfig, section: str, payload: dict) -> None:
    path = Path(config.output_dir) / "manifest.json"
    manifest = json.loads(path.read_text()) if path.is_file() else {}
    manifest["config"] = config.to_dict()
    manifest["versions"] = {"fedtab": __version__, "numpy": np.__version__,
                            "scipy": scipy.__version__, "python": platform.python_version()}
    manifest[section] = payload
    _write(path, _dump(manifest))


def _load_inputs(config: PipelineConfig) -> tuple[list[Table], Table]:
    with phase("config"):
        config.check_files()
        schema = load_schema(config.schema)
    with phase("ingest"):
        table = read_table(config.data, schema)
    with phase("partition"):
        return partition(table, config)


def run_partition(config: PipelineConfig) -> tuple[list[Table], Table]:
    shards, test = _load_inputs(config)
    out = Path(config.output_dir) / "partition"
    with phase("partition"):
        for k, s in enumerate(shards):
            _write(out / f"client_{k}.csv", s.to_csv())
        _write(out / "test.csv", test.to_csv())
        _update_manifest(config, "partition", {
            "client_rows": [s.n_rows for s in shards], "test_rows": test.n_rows,
            "label_counts": [category_counts(s.labels) for s in shards]})
    return shards, test


def run_fit(config: PipelineConfig) -> StatsArtifact:
    shards, _ = _load_inputs(config)
    ledger = L.CommLedger()
    artifact = fit_statistics(shards, config, ledger)
    out = Path(config.output_dir)
    with phase("persist"):
        _write(out / "stats.json", artifact.to_json())
        _write(out / "ledger.csv", ledger.to_csv())
        _update_manifest(config, "fit", {
            "gmm_rounds": artifact.meta["gmm_rounds"],
            "covariance": {"clamp_count": artifact.covariance.clamp_count,
                           "repair_shift": artifact.chol.repair_shift},
            "dp": artifact.dp.to_dict(),
            "communication": closed_form_report(artifact, ledger)})
    return artifact


def load_artifact(config: PipelineConfig) -> StatsArtifact:
    path = Path(config.output_dir) / "stats.json"
    with phase("load"):
        if not path.is_file():
            raise FileNotFoundError(f"{path} not found; run `fit` first")
        return StatsArtifact.from_json(path.read_text(encoding="utf-8"))


def run_synthesize(config: PipelineConfig, artifact: StatsArtifact | None = None
                   ) -> dict[int, Table]:
    artifact = artifact or load_artifact(config)
    shards, _ = _load_inputs(config)
    synthetic = synthesize_clients(artifact, shards, config)
    out = Path(config.output_dir)
    with phase("persist"):
        for k, t in synthetic.items():
            _write(out / f"client_{k}_synth.csv", t.to_csv(with_provenance=True))
        _update_manifest(config, "synthesis", {
            "rows": {str(k): t.n_rows for k, t in synthetic.items()},
            "seeds": {str(k): client_seed(config.seed, k) for k in synthetic},
            "clip": config.clip, "repair_shift": artifact.chol.repair_shift})
    return synthetic


def run_evaluate(config: PipelineConfig, artifact: StatsArtifact | None = None) -> Evaluation:
    artifact = artifact or load_artifact(config)
    shards, test = _load_inputs(config)
    out = Path(config.output_dir)
    with phase("load"):
        synthetic = {}
        for k, s in enumerate(shards):
            if s.n_rows:
                path = out / f"client_{k}_synth.csv"
                if not path.is_file():
                    raise FileNotFoundError(f"{path} not found; run `synthesize` first")
                synthetic[k] = read_table(path, artifact.schema)
        ledger_path = out / "ledger.csv"
        ledger = L.CommLedger.from_csv(ledger_path.read_text()) if ledger_path.is_file() \
            else L.CommLedger()
        ledger = _drop_model_rounds(ledger)
    evaluation = evaluate_run(artifact, shards, test, synthetic, config, ledger)
    with phase("persist"):
        _write(out / "similarity.json", evaluation.similarity.to_json())
        _write(out / "similarity.csv", evaluation.similarity.to_csv())
        _write(out / "curves.csv", evaluation.curves_csv())
        _write(out / "ledger.csv", ledger.to_csv())
        _update_manifest(config, "evaluation", {**evaluation.summary(),
                                                "train": config.train.to_dict(),
                                                "ledger": ledger.summarize()})
    return evaluation


def _drop_model_rounds(ledger: L.CommLedger) -> L.CommLedger:
    """Re-running evaluate must not double-count training traffic."""
    kept = L.CommLedger()
    kept.extend([e for e in ledger.entries if e.phase != L.MODEL_ROUND])
    return kept


def run_pipeline(config: PipelineConfig) -> Evaluation:
    run_partition(config)
    artifact = run_fit(config)
    run_synthesize(config, artifact)
    return run_evaluate(config, artifact)


__all__ = [
    "ClientContext", "Evaluation", "PipelineResult", "ServerContext", "closed_form_report",
    "evaluate_run", "fit_statistics", "load_artifact", "partition", "phase", "run_evaluate",
    "run_fit", "run_in_memory", "run_partition", "run_pipeline", "run_synthesize",
    "synthesize_clients",
]
