"""Federated tabular data augmentation from shared summary statistics.

Clients fit a global per-column Gaussian mixture and global category
frequencies together, encode their rows into a roughly Gaussian space, and
share first and second moments of that encoding. From the resulting
covariance (optionally privatised with the Gaussian mechanism) any client can
draw synthetic rows that follow the global joint distribution and use them to
offset label skew in federated training.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .artifact import StatsArtifact
from .config import PipelineConfig, load_config
from .covariance import (CholFactor, DpParams, GlobalCovariance, LocalMoments, add_dp_noise,
                         aggregate_covariance, gaussian_sigma, local_moments, psd_cholesky)
from .errors import (ConfigError, ContractError, DecodingError, EncodingError, FedTabError,
                     IngestionError, NumericalError, PhaseError, ProtocolError, SchemaError)
from .gmm import GmmPosterior, GmmPrior, fit_federated_gmm
from .ledger import CommLedger, closed_form_costs, summarize
from .metrics import SimilarityReport, column_jsd, column_wd, similarity_report
from .synthesis import SynthesisRequest, augment_client, client_seed, synthesize
from .table import (Column, PartitionPlan, Schema, Table, dirichlet_partition, load_schema,
                    load_table, read_table)
from .train import (Featurizer, SoftmaxModel, TrainConfig, evaluate, fedavg_aggregate,
                    featurize, local_update, train_federated)
from .transforms import (ARGMAX, SAMPLE, IcdmCodec, MdtCodec, build_icdm, decode_matrix,
                         encode_table, icdm_decode, icdm_encode, mdt_decode, mdt_encode)

__all__ = [
    "ARGMAX", "SAMPLE", "CholFactor", "Column", "CommLedger", "ConfigError", "ContractError",
    "DecodingError", "DpParams", "EncodingError", "FedTabError", "Featurizer", "GlobalCovariance",
    "GmmPosterior", "GmmPrior", "IcdmCodec", "IngestionError", "LocalMoments", "MdtCodec",
    "NumericalError", "PartitionPlan", "PhaseError", "PipelineConfig", "ProtocolError",
    "Schema", "SchemaError", "SimilarityReport", "SoftmaxModel", "StatsArtifact",
    "SynthesisRequest", "Table", "TrainConfig", "__version__", "add_dp_noise",
    "aggregate_covariance", "augment_client", "build_icdm", "client_seed", "closed_form_costs",
    "column_jsd", "column_wd", "decode_matrix", "dirichlet_partition", "encode_table",
    "evaluate", "fedavg_aggregate", "featurize", "fit_federated_gmm", "gaussian_sigma",
    "icdm_decode", "icdm_encode", "load_config", "load_schema", "load_table", "local_moments",
    "local_update", "mdt_decode", "mdt_encode", "psd_cholesky", "read_table",
    "similarity_report", "summarize", "synthesize", "train_federated",
]
