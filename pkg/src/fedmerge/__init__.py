"""Federated matrix-factorization recommendation with elastic model merging.

Per-client implicit-feedback matrix factorization trained round-
synchronously: clients blend the downloaded global item table into their
local one with learned per-item weights before training, the server
aggregates uploads with similarity-informed per-client weights, and uploads
can be protected with local differential privacy. Ships the leave-one-out
HR@K / NDCG@K evaluation protocol, the scheme ablation grid, and desk-scale
probes of the underlying convex-case claims.
"""

from .config import ExperimentConfig, load_config
from .data import (
    ClientSplit,
    InteractionDataset,
    RawRating,
    build_dataset,
    leave_one_out_split,
    parse_dataset,
    sample_train_negatives,
)
from .estimator import FederatedMergeRecommender
from .merging import AdapterNet, MergeScheme, build_merge_input, merge_models
from .metrics import MetricRecord, evaluate_all, hr_at_k, ndcg_at_k, rank_test_item
from .runner import Simulation, run_ablation, run_alpha_sweep, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AdapterNet",
    "ClientSplit",
    "ExperimentConfig",
    "FederatedMergeRecommender",
    "InteractionDataset",
    "MergeScheme",
    "MetricRecord",
    "RawRating",
    "Simulation",
    "build_dataset",
    "build_merge_input",
    "evaluate_all",
    "hr_at_k",
    "leave_one_out_split",
    "load_config",
    "merge_models",
    "ndcg_at_k",
    "parse_dataset",
    "rank_test_item",
    "run_ablation",
    "run_alpha_sweep",
    "run_experiment",
    "sample_train_negatives",
    "__version__",
]
