"""Bias-constrained classifier training using word embeddings of names.

Trains a single-layer softmax classifier while penalizing correlation
between the predicted probability of each record's true label and a word
embedding of the record's name (cluster-based or covariance-based
penalty), and measures the effect through per-class true-positive-rate
gaps between groups.
"""

__version__ = "0.1.0"

from .clustering import ClusterModel, assign, kmeans, kmeans_pp_init
from .data import Dataset, NameDemographics, TabularSchema
from .embeddings import Coverage, EmbeddingTable, load_embeddings, name_vector
from .losses import PenaltyInputs, clucl_penalty, cocl_penalty, total_loss
from .metrics import BiasReport, GroupAttribute, GroupLabels, bias_report
from .model import ModelParams, Prediction, forward
from .training import TrainConfig, TrainResult, train

__all__ = [
    "__version__",
    "ClusterModel",
    "assign",
    "kmeans",
    "kmeans_pp_init",
    "Dataset",
    "NameDemographics",
    "TabularSchema",
    "Coverage",
    "EmbeddingTable",
    "load_embeddings",
    "name_vector",
    "PenaltyInputs",
    "clucl_penalty",
    "cocl_penalty",
    "total_loss",
    "BiasReport",
    "GroupAttribute",
    "GroupLabels",
    "bias_report",
    "ModelParams",
    "Prediction",
    "forward",
    "TrainConfig",
    "TrainResult",
    "train",
]
