"""Open-set recognition and open-set active learning in a fixed embedding space."""

from .active_learning import (
    ALConfig,
    ALTrace,
    LabelOracle,
    QueryStrategy,
    StrategyKind,
    run_active_learning,
    select_query,
    uldr_score,
)
from .embedding_space import (
    DatasetSplit,
    Embedding,
    LabeledEmbedding,
    LabeledSet,
    UnlabeledPool,
    load_dataset,
    nearest_neighbors,
    parse_embedding_file,
    save_dataset,
    split_known_novel,
)
from .evaluation import aupr, auroc, closed_accuracy, f1_at_threshold, open_set_accuracy, recall_at_m
from .exceptions import ConfigError, DataError, DimensionMismatchError, InvariantViolation, OpenSetError, OracleError
from .kernel import KernelDensityClassifier, KernelParams, class_posterior, classify
from .open_set import NOVEL, NoveltyMeasure, OpenSetClassifier, calibrate_threshold, open_set_predict
from .pseudo_label import KMeansPP, SilhouetteKMeans, generate_pseudo_labels, kmeans_pp_init, lloyd, select_k
from .synthetic import MixtureConfig, generate_mixture, preset

__version__ = "0.1.0"

__all__ = [
    "ALConfig",
    "ALTrace",
    "aupr",
    "auroc",
    "calibrate_threshold",
    "class_posterior",
    "classify",
    "closed_accuracy",
    "ConfigError",
    "DataError",
    "DatasetSplit",
    "DimensionMismatchError",
    "Embedding",
    "f1_at_threshold",
    "generate_mixture",
    "generate_pseudo_labels",
    "InvariantViolation",
    "KernelDensityClassifier",
    "KernelParams",
    "kmeans_pp_init",
    "KMeansPP",
    "LabeledEmbedding",
    "LabeledSet",
    "LabelOracle",
    "lloyd",
    "load_dataset",
    "MixtureConfig",
    "nearest_neighbors",
    "NOVEL",
    "NoveltyMeasure",
    "open_set_accuracy",
    "open_set_predict",
    "OpenSetClassifier",
    "OpenSetError",
    "OracleError",
    "parse_embedding_file",
    "preset",
    "QueryStrategy",
    "recall_at_m",
    "run_active_learning",
    "save_dataset",
    "select_k",
    "select_query",
    "SilhouetteKMeans",
    "split_known_novel",
    "StrategyKind",
    "uldr_score",
    "UnlabeledPool",
]
