"""scikit-learn compatible wrappers around the functional core.

These let the split scheme, hashing and near-duplicate grouping sit inside a
``Pipeline`` and be cloned or grid-searched like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_same_length
from .allocator import SLOTS, allocation_from_weights, project, slot_weights
from .dedup import DEFAULT_THRESHOLD, group_labels, phash
from .metrics import (
    RetrievalResult,
    cosine_similarity_matrix,
    exclusion_set,
    macro_retrieval,
    rank_by_similarity,
)


class FeatureSpaceSplitter(TransformerMixin, BaseEstimator):
    """Select the columns of one task or view from a backbone feature matrix.

    Parameters
    ----------
    view : str
        A slot name or one of ``"reid"``, ``"body"``, ``"arm"``.
    schema : TaskSchema, optional
        Supplies the label counts used as weights; the shipped default if None.
    residual_weight, shared_weight : int, optional
        Override the residual appearance and shared posture weights.

    Attributes
    ----------
    allocation_ : FeatureAllocation
    n_features_in_ : int
    """

    def __init__(self, view="reid", schema=None, residual_weight=None, shared_weight=None):
        self.view = view
        self.schema = schema
        self.residual_weight = residual_weight
        self.shared_weight = shared_weight

    def fit(self, X, y=None):
        X = check_features(X)
        self.n_features_in_ = X.shape[1]
        weights = slot_weights(self.schema, self.residual_weight, self.shared_weight)
        self.allocation_ = allocation_from_weights(self.n_features_in_, weights)
        self.allocation_.indices(self.view)  # fail early on a bad view name
        return self

    def transform(self, X):
        check_is_fitted(self, "allocation_")
        return project(X, self.allocation_, self.view)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "allocation_")
        names = np.asarray(input_features) if input_features is not None else \
            np.array([f"x{i}" for i in range(self.n_features_in_)])
        return names[self.allocation_.indices(self.view)]


class PerceptualHasher(TransformerMixin, BaseEstimator):
    """Map a sequence of RGB rasters to their 64-bit perceptual hashes (uint64)."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.array([phash(img).value for img in X], dtype=np.uint64)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.two_d_array = False
        return tags


class NearDuplicateGrouper(ClusterMixin, BaseEstimator):
    """Cluster hashes into connected components under a Hamming threshold.

    ``labels_`` follows input order; components are numbered by first member.
    """

    def __init__(self, threshold=DEFAULT_THRESHOLD, prefilter=False):
        self.threshold = threshold
        self.prefilter = prefilter

    def fit(self, X, y=None):
        values = np.asarray(X, dtype=np.uint64).ravel()
        self.labels_ = group_labels(values, self.threshold, prefilter=self.prefilter)
        self.n_groups_ = int(self.labels_.max()) + 1 if self.labels_.size else 0
        return self


class GalleryRanker(BaseEstimator):
    """Cosine-similarity retrieval over a fitted gallery.

    ``fit`` stores the gallery; ``rank`` returns one :class:`RetrievalResult`
    per query; ``score`` returns macro mAP.
    """

    def __init__(self, groups=None):
        self.groups = groups

    def fit(self, X, y, image_ids=None):
        X = check_features(X)
        check_same_length(X, y, ("X", "y"))
        self.gallery_ = X
        self.gallery_pids_ = list(y)
        self.gallery_ids_ = list(image_ids) if image_ids is not None else [f"g{i}" for i in range(len(X))]
        self.n_features_in_ = X.shape[1]
        return self

    def rank(self, X, y=None, image_ids=None):
        check_is_fitted(self, "gallery_")
        X = check_features(X, n_features=self.n_features_in_)
        ids = list(image_ids) if image_ids is not None else [f"q{i}" for i in range(len(X))]
        pids = list(y) if y is not None else [None] * len(X)
        sim = cosine_similarity_matrix(X, self.gallery_)
        out = []
        for i in range(len(X)):
            order = rank_by_similarity(sim[i], exclusion_set(ids[i], self.groups, self.gallery_ids_))
            out.append(RetrievalResult(ids[i], pids[i], order, sim[i][order]))
        return out

    def score_all(self, X, y, image_ids=None):
        results = [r for r in self.rank(X, y, image_ids) if r.query_pid is not None]
        return macro_retrieval(results, self.gallery_pids_)

    def score(self, X, y, image_ids=None):
        return self.score_all(X, y, image_ids).macro_map


__all__ = ["FeatureSpaceSplitter", "PerceptualHasher", "NearDuplicateGrouper", "GalleryRanker", "SLOTS"]
