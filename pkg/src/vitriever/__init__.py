"""Exhaustive vector-similarity retrieval and benchmark scoring for image descriptors."""

from .datasets import DatasetLayout, load_ground_truth, parse_generic_json, write_generic_json
from .errors import (
    DimensionMismatchError,
    GroundTruthError,
    MetricError,
    StoreFormatError,
    ValidationError,
    VitrieverError,
)
from .evaluation import (
    EvalProtocol,
    EvalReport,
    GroundTruth,
    QueryGroundTruth,
    average_precision,
    mean_average_precision,
    ns_score,
)
from .metrics import BatchDistances, Metric, distance, distance_batch, pairwise_distances
from .normalization import (
    ApplyResult,
    FittedNormalizer,
    NormalizationSpec,
    Scheme,
    apply,
    fit,
    fit_apply,
    load_normalizer,
    save_normalizer,
)
from .runner import DescriptorSet, GridSpec, evaluate_retrieval, run_grid
from .search import FULL, RankedEntry, RankedList, batch_search, top_k, write_ranked_lists
from .store import DescriptorMatrix, read_store, read_text_listing, write_store

__version__ = "0.1.0"

__all__ = [
    "ApplyResult",
    "BatchDistances",
    "DatasetLayout",
    "DescriptorMatrix",
    "DescriptorSet",
    "DimensionMismatchError",
    "EvalProtocol",
    "EvalReport",
    "FULL",
    "FittedNormalizer",
    "GridSpec",
    "GroundTruth",
    "GroundTruthError",
    "Metric",
    "MetricError",
    "NormalizationSpec",
    "QueryGroundTruth",
    "RankedEntry",
    "RankedList",
    "Scheme",
    "StoreFormatError",
    "ValidationError",
    "VitrieverError",
    "average_precision",
    "apply",
    "batch_search",
    "distance",
    "distance_batch",
    "evaluate_retrieval",
    "fit",
    "fit_apply",
    "load_ground_truth",
    "load_normalizer",
    "mean_average_precision",
    "ns_score",
    "pairwise_distances",
    "parse_generic_json",
    "read_store",
    "read_text_listing",
    "run_grid",
    "save_normalizer",
    "top_k",
    "write_generic_json",
    "write_ranked_lists",
    "write_store",
]
