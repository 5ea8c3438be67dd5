"""Evaluation metrics: macro CMC / mAP with group exclusion, macro F1, PIQ and LTS_k.

Retrieval metrics are macro-averaged over identities: each identity's queries
are averaged first, then identities are averaged with equal weight, so head
identities with many query images do not dominate the score.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._validation import check_features, check_same_length, check_vector, is_unlabeled
from .exceptions import (
    DegenerateQuery,
    DimensionMismatch,
    EmptyGroundTruthSet,
    EmptyHistogram,
    EmptyQuerySet,
    LengthMismatch,
    RangeError,
)

logger = logging.getLogger(__name__)

RANKS = (1, 5)


# --- retrieval -------------------------------------------------------------

def average_precision(relevance: Sequence[bool], num_relevant_total: int) -> float:
    """Mean of precision@k over the ranks k holding a relevant item.

    ``num_relevant_total`` counts relevant items including any missing from
    ``relevance`` (e.g. a truncated list); they contribute precision 0.
    """
    rel = np.asarray(relevance, dtype=bool)
    hits = int(rel.sum())
    if num_relevant_total < 1:
        raise DegenerateQuery("query has no relevant gallery items")
    if num_relevant_total < hits:
        raise ValueError("num_relevant_total is smaller than the number of relevant items in the list")
    if hits == 0:
        return 0.0
    ranks = np.flatnonzero(rel) + 1
    precisions = np.arange(1, hits + 1) / ranks
    return math.fsum(precisions) / num_relevant_total


@dataclass(frozen=True)
class RetrievalResult:
    """Gallery ranking for one query, best match first.

    ``order`` holds gallery indices; excluded indices never appear.
    """

    query_id: str
    query_pid: str | None
    order: np.ndarray
    similarity: np.ndarray


def cosine_similarity_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    An = A / np.linalg.norm(A, axis=1, keepdims=True)
    Bn = B / np.linalg.norm(B, axis=1, keepdims=True)
    return An @ Bn.T


def rank_by_similarity(sim: np.ndarray, excluded: Iterable[int] = ()) -> np.ndarray:
    """Indices sorted by descending similarity, ties to the lower index."""
    keep = np.ones(sim.shape[0], dtype=bool)
    excl = np.fromiter(excluded, dtype=np.int64)
    keep[excl] = False
    idx = np.flatnonzero(keep)
    # lexsort: last key is primary; idx ascending breaks ties
    return idx[np.lexsort((idx, -sim[idx]))]


def rank_gallery(
    query_row,
    gallery,
    excluded: Iterable[int] = (),
    *,
    query_id: str = "",
    query_pid: str | None = None,
) -> RetrievalResult:
    q = check_vector(query_row, name="query_row")
    G = check_features(gallery, name="gallery", min_samples=0)
    if G.shape[1] != q.shape[0]:
        raise DimensionMismatch(f"query has {q.shape[0]} dims, gallery has {G.shape[1]}")
    excluded = list(excluded)
    if any(not 0 <= e < G.shape[0] for e in excluded):
        raise IndexError("excluded index outside the gallery")
    if G.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return RetrievalResult(query_id, query_pid, empty, np.empty(0))
    sim = cosine_similarity_matrix(q[None, :], G)[0]
    order = rank_by_similarity(sim, excluded)
    return RetrievalResult(query_id, query_pid, order, sim[order])


def exclusion_set(query_id: str, groups: Mapping[str, int] | None, gallery_ids: Sequence[str]) -> set[int]:
    """Gallery indices sharing the query's near-duplicate group."""
    if not groups or query_id not in groups:
        return set()
    g = groups[query_id]
    return {i for i, gid in enumerate(gallery_ids) if groups.get(gid) == g}


@dataclass(frozen=True)
class RetrievalScores:
    macro_map: float
    macro_rank1: float
    macro_rank5: float
    per_id: Mapping[str, dict] = field(default_factory=dict, compare=False, repr=False)

    @property
    def reid(self) -> float:
        return (self.macro_rank1 + self.macro_map) / 2


def macro_retrieval(results: Iterable[RetrievalResult], gallery_labels: Sequence[str | None]) -> RetrievalScores:
    """Macro mAP and macro CMC@1/@5.

    Queries whose exclusion left no relevant gallery item are dropped, and an
    identity with no surviving query is dropped from the macro mean. Sums use
    ``math.fsum`` in sorted identity order so the result is independent of the
    order queries are supplied in.
    """
    labels = np.array([None if is_unlabeled(g) else g for g in gallery_labels], dtype=object)
    total_per_pid: dict = defaultdict(int)
    for g in labels:
        if g is not None:
            total_per_pid[g] += 1

    per_id: dict[str, dict[str, list[float]]] = defaultdict(lambda: {"ap": [], **{f"r{k}": [] for k in RANKS}})
    n_queries = 0
    for res in results:
        n_queries += 1
        if res.query_pid is None:
            raise ValueError(f"query {res.query_id!r} has no person id")
        if total_per_pid.get(res.query_pid, 0) == 0:
            raise ValueError(f"query person {res.query_pid!r} does not appear in the gallery")
        rel = labels[res.order] == res.query_pid
        n_rel = int(rel.sum())
        if n_rel == 0:
            logger.debug("dropping query %s: no relevant gallery item after exclusion", res.query_id)
            continue
        entry = per_id[res.query_pid]
        entry["ap"].append(average_precision(rel, n_rel))
        first = int(np.argmax(rel))
        for k in RANKS:
            entry[f"r{k}"].append(1.0 if first < k else 0.0)
    if n_queries == 0:
        raise EmptyQuerySet("no queries supplied")
    if not per_id:
        raise EmptyQuerySet("every query lost all relevant gallery items to exclusion")

    summary = {}
    for pid in sorted(per_id):
        e = per_id[pid]
        summary[pid] = {key: math.fsum(vals) / len(vals) for key, vals in e.items()}
        summary[pid]["n_queries"] = len(e["ap"])
    n = len(summary)
    mean = lambda key: math.fsum(s[key] for s in summary.values()) / n  # noqa: E731
    return RetrievalScores(mean("ap"), mean("r1"), mean("r5"), per_id=summary)


def evaluate_retrieval(
    query_features,
    query_ids: Sequence[str],
    query_pids: Sequence[str | None],
    gallery_features,
    gallery_ids: Sequence[str],
    gallery_pids: Sequence[str | None],
    groups: Mapping[str, int] | None = None,
    *,
    n_jobs: int = 1,
) -> RetrievalScores:
    """Rank every identified query against the gallery and reduce to macro scores.

    Unidentified queries are skipped. With ``groups`` set, gallery images in
    the query's near-duplicate group are excluded from its ranking.
    """
    Q = check_features(query_features, name="query_features")
    G = check_features(gallery_features, name="gallery_features")
    if Q.shape[1] != G.shape[1]:
        raise DimensionMismatch(f"query width {Q.shape[1]} != gallery width {G.shape[1]}")
    check_same_length(Q, query_ids, ("query_features", "query_ids"))
    check_same_length(Q, query_pids, ("query_features", "query_pids"))
    check_same_length(G, gallery_ids, ("gallery_features", "gallery_ids"))
    check_same_length(G, gallery_pids, ("gallery_features", "gallery_pids"))
    sim = cosine_similarity_matrix(Q, G)
    todo = [i for i, p in enumerate(query_pids) if not is_unlabeled(p)]

    def one(i: int) -> RetrievalResult:
        order = rank_by_similarity(sim[i], exclusion_set(query_ids[i], groups, gallery_ids))
        return RetrievalResult(query_ids[i], query_pids[i], order, sim[i][order])

    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, todo))
    else:
        results = [one(i) for i in todo]
    return macro_retrieval(results, gallery_pids)


# --- classification --------------------------------------------------------

@dataclass(frozen=True)
class TaskMetric:
    task: str
    macro_f1: float
    precision: np.ndarray = field(compare=False)
    recall: np.ndarray = field(compare=False)
    f1: np.ndarray = field(compare=False)
    included: np.ndarray = field(compare=False)


def _f1_from_counts(task: str, tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> TaskMetric:
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / pr, 0.0)
    # classes with no support and no predictions carry no information
    included = (tp + fn + fp) > 0
    macro = math.fsum(f1[included]) / included.sum() if included.any() else 0.0
    return TaskMetric(task, macro, precision, recall, f1, included)


def macro_f1_single(pred: Sequence[int], gt: Sequence[int], cardinality: int, task: str = "") -> TaskMetric:
    check_same_length(pred, gt, ("pred", "gt"))
    p = np.asarray(pred, dtype=np.int64)
    g = np.asarray(gt, dtype=np.int64)
    for name, arr in (("pred", p), ("gt", g)):
        if arr.size and (arr.min() < 0 or arr.max() >= cardinality):
            raise RangeError(f"{name} holds an index outside [0, {cardinality})")
    confusion = np.bincount(g * cardinality + p, minlength=cardinality * cardinality).reshape(cardinality, cardinality)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    return _f1_from_counts(task, tp, fp, fn)


def _indicator(sets: Sequence[Iterable[int]], cardinality: int, name: str) -> np.ndarray:
    M = np.zeros((len(sets), cardinality), dtype=bool)
    for i, s in enumerate(sets):
        for j in s:
            if not 0 <= j < cardinality:
                raise RangeError(f"{name}[{i}] holds index {j} outside [0, {cardinality})")
            M[i, j] = True
    return M


def macro_f1_multilabel(
    pred: Sequence[Iterable[int]], gt: Sequence[Iterable[int]], cardinality: int, task: str = ""
) -> TaskMetric:
    """Per-label one-vs-rest F1, macro-averaged over labels with support or predictions."""
    check_same_length(pred, gt, ("pred", "gt"))
    P = _indicator(pred, cardinality, "pred")
    G = _indicator(gt, cardinality, "gt")
    empty = np.flatnonzero(~G.any(axis=1))
    if empty.size:
        raise EmptyGroundTruthSet(f"ground-truth label set is empty for sample {int(empty[0])}")
    tp = (P & G).sum(axis=0)
    fp = (P & ~G).sum(axis=0)
    fn = (~P & G).sum(axis=0)
    return _f1_from_counts(task, tp, fp, fn)


# --- PIQ -------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationReport:
    macro_map: float
    macro_rank1: float
    macro_rank5: float
    appearance: Mapping[str, float]
    posture: Mapping[str, float]
    expression: float

    @property
    def reid_score(self) -> float:
        return (self.macro_rank1 + self.macro_map) / 2

    @property
    def appearance_score(self) -> float:
        return math.fsum(self.appearance.values()) / len(self.appearance)

    @property
    def posture_score(self) -> float:
        return math.fsum(self.posture.values()) / len(self.posture)

    @property
    def piq(self) -> float:
        return piq(self.macro_map, self.macro_rank1, list(self.appearance.values()),
                   list(self.posture.values()), self.expression)

    def to_dict(self) -> dict:
        return {
            "reid": {"macro_map": self.macro_map, "macro_rank1": self.macro_rank1, "macro_rank5": self.macro_rank5},
            "appearance": {**self.appearance, "score": self.appearance_score},
            "posture": {**self.posture, "score": self.posture_score},
            "emotion": {"expression": self.expression},
            "piq": self.piq,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvaluationReport":
        app = {k: float(v) for k, v in d["appearance"].items() if k != "score"}
        pos = {k: float(v) for k, v in d["posture"].items() if k != "score"}
        r = d["reid"]
        return cls(float(r["macro_map"]), float(r["macro_rank1"]), float(r["macro_rank5"]),
                   app, pos, float(d["emotion"]["expression"]))


def piq(
    macro_map: float,
    macro_rank1: float,
    appearance_f1: Sequence[float],
    posture_f1: Sequence[float],
    expression_f1: float,
) -> float:
    """Equal-weight mean of the re-id, appearance, posture and emotion scores.

    The re-id score is the mean of macro Rank-1 and macro mAP; appearance and
    posture are the means of their task F1 scores.
    """
    if len(appearance_f1) != 4 or len(posture_f1) != 2:
        raise LengthMismatch("expected 4 appearance and 2 posture F1 values")
    values = [macro_map, macro_rank1, *appearance_f1, *posture_f1, expression_f1]
    for v in values:
        if not (0.0 <= v <= 1.0):
            raise RangeError(f"metric value {v} outside [0, 1]")
    reid = (macro_rank1 + macro_map) / 2
    app = math.fsum(appearance_f1) / 4
    pos = math.fsum(posture_f1) / 2
    return math.fsum((reid, app, pos, expression_f1)) / 4


# --- long-tail score -------------------------------------------------------

def as_fraction(k) -> Fraction:
    """Read ``k`` as the decimal it prints as, so 0.2 means exactly 1/5."""
    if isinstance(k, Fraction):
        return k
    if isinstance(k, (int, np.integer)):
        return Fraction(int(k))
    return Fraction(repr(float(k)))


def lts(hist: Sequence[int], k) -> float:
    """Long-tail score: fewest classes covering a ``k`` share of samples, over ``k * N``.

    Taking classes in descending count order gives the minimum cover. ``k``
    is handled as an exact rational, so boundary cases like ``k * total``
    landing on an integer are not at the mercy of float rounding.
    """
    y = np.asarray(hist)
    if y.ndim != 1 or y.size == 0:
        raise EmptyHistogram("histogram must be a non-empty 1-D sequence")
    if np.any(y < 0) or not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError("histogram entries must be non-negative integers")
    kf = as_fraction(k)
    if not (0 < kf < 1):
        raise RangeError(f"k must lie in (0, 1), got {k}")
    counts = sorted((int(c) for c in y), reverse=True)
    total = sum(counts)
    if total == 0:
        raise EmptyHistogram("histogram has no samples")
    need = kf * total
    acc = 0
    for m, c in enumerate(counts, start=1):
        acc += c
        if acc >= need:
            break
    return float(Fraction(m) / (kf * len(counts)))
