"""Identity-disjoint dataset splitting and multi-label attribute evaluation."""

from .core import AttributeSchema, Dataset, Sample, build_identity_index, positive_ratio, prune
from .exceptions import PedsplitError
from .metrics import (
    PredictionSet,
    audit_leakage,
    evaluate,
    instance_metrics,
    label_metrics,
    sigmoid,
    stratified_eval,
    threshold_predictions,
)
from .splitter import SplitSpec, Thresholds, ZeroShotSplitter, search_split, search_versions, verify_split
from .weights import WeightFunctionSpec, compute_weights, weighted_bce

__version__ = "0.1.0"
