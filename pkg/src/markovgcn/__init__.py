"""Self-supervised Markov graph convolutional network for flow-level IoT
intrusion detection."""

from .graphbuild import SparseGraph, add_self_loops, degree_vector, knn_graph, symmetric_normalize
from .ingest import (
    FeatureMatrix,
    LabelVector,
    Masks,
    RecordTable,
    load_flow_csv,
    preprocess,
    stratified_split,
    synth_dataset,
)
from .markov import (
    MarkovConfig,
    MarkovLayerStack,
    RowStochasticMatrix,
    inflate_normalize,
    markov_process_agg,
    prune_epsilon,
    transition_matrix,
)
from .metrics import MetricsReport, confusion_matrix, emit_report, precision_recall_f1, roc_micro
from .model import ModelParams, TrainConfig, gcn_forward, predict, train_pipeline

__version__ = "0.1.0"

__all__ = [
    "FeatureMatrix",
    "LabelVector",
    "MarkovConfig",
    "MarkovLayerStack",
    "Masks",
    "MetricsReport",
    "ModelParams",
    "RecordTable",
    "RowStochasticMatrix",
    "SparseGraph",
    "TrainConfig",
    "add_self_loops",
    "confusion_matrix",
    "degree_vector",
    "emit_report",
    "gcn_forward",
    "inflate_normalize",
    "knn_graph",
    "load_flow_csv",
    "markov_process_agg",
    "precision_recall_f1",
    "predict",
    "preprocess",
    "prune_epsilon",
    "roc_micro",
    "stratified_split",
    "symmetric_normalize",
    "synth_dataset",
    "train_pipeline",
    "transition_matrix",
]
