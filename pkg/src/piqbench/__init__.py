"""Evaluation metrics, loss kernels and data utilities for portrait interpretation."""

from .allocator import FeatureAllocation, plan_allocation, project
from .dedup import GroupAssignment, PHash64, group, hamming, phash
from .estimators import FeatureSpaceSplitter, GalleryRanker, NearDuplicateGrouper, PerceptualHasher
from .losses import (
    FeatureBatch,
    LossResult,
    bce_multilabel,
    br_loss,
    euclid_cos_gap,
    finite_diff_check,
    normalize_rows,
    softmax_ce,
    task_loss,
    total_loss_average,
    total_loss_uncertainty,
    triplet_loss_batch_hard,
)
from .metrics import (
    EvaluationReport,
    RetrievalScores,
    average_precision,
    evaluate_retrieval,
    exclusion_set,
    lts,
    macro_f1_multilabel,
    macro_f1_single,
    macro_retrieval,
    piq,
    rank_gallery,
)
from .schema import TaskSchema, default_schema, load_schema, validate_annotations

__version__ = "0.1.0"
