"""Synthetic datasets with known structure, plus brute-force reference oracles.

The oracles are deliberately naive (Python loops, exhaustive enumeration) and
share no code with :mod:`piqbench.metrics`, so they can audit it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .embedding import EmbeddingMatrix
from .exceptions import InfeasibleSeparation, RangeError, TooLarge
from .schema import (
    APPEARANCE_TASKS,
    DatasetSplit,
    SampleAnnotation,
    Subset,
    TaskSchema,
    default_schema,
)

MAX_PLACEMENT_TRIES = 2000


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic re-id dataset.

    ``separation`` is the minimum angle in radians between any two identity
    centroids; ``noise`` is the per-coordinate standard deviation added to
    each sample. Per-identity counts come from ``counts`` when given,
    otherwise from a power law ``max_count * rank**-tail_exponent``.
    """

    num_ids: int = 10
    dim: int = 32
    counts: tuple[int, ...] | None = None
    tail_exponent: float = 0.0
    max_count: int = 8
    separation: float = 0.5
    noise: float = 0.1
    num_unidentified: int = 0
    train_fraction: float = 0.0
    query_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.counts is not None:
            object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
            if len(self.counts) != self.num_ids:
                raise ValueError("counts must have one entry per identity")
        if self.num_ids < 1 or self.dim < 2:
            raise RangeError("need num_ids >= 1 and dim >= 2")
        if any(c < 1 for c in self.id_counts()):
            raise RangeError("every identity needs at least one sample")
        if self.separation <= 0:
            raise RangeError("separation must be positive")
        if self.noise < 0:
            raise RangeError("noise must be non-negative")

    def id_counts(self) -> tuple[int, ...]:
        if self.counts is not None:
            return self.counts
        return tuple(long_tail_counts(self.num_ids, self.tail_exponent, self.max_count))


@dataclass(frozen=True)
class SynthDataset:
    embeddings: EmbeddingMatrix
    annotations: tuple[SampleAnnotation, ...]
    split: DatasetSplit
    centroids: np.ndarray = field(repr=False)

    def subset(self, subset: Subset) -> tuple[EmbeddingMatrix, list[str | None]]:
        ids = self.split.ids(subset)
        pid = {a.image_id: a.person_id for a in self.annotations}
        return self.embeddings.subset(ids), [pid[i] for i in ids]


def long_tail_counts(num_ids: int, exponent: float, max_count: int) -> list[int]:
    ranks = np.arange(1, num_ids + 1, dtype=np.float64)
    return [max(1, int(round(c))) for c in max_count * ranks ** (-exponent)]


def counts_for_lts(num_ids: int, target: float, k=0.2, max_count: int = 1000) -> list[int]:
    """Power-law counts whose LTS_k lands as close to ``target`` as the profile allows."""
    from .metrics import lts

    def score(e: float) -> float:
        return lts(long_tail_counts(num_ids, e, max_count), k)

    lo, hi = 0.0, 8.0
    for _ in range(60):
        mid = (lo + hi) / 2
        # LTS falls as the exponent grows
        if score(mid) > target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda e: abs(score(e) - target))
    return long_tail_counts(num_ids, best, max_count)


def place_centroids(n: int, dim: int, min_angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample ``n`` unit vectors whose pairwise angles are at least ``min_angle``."""
    max_cos = math.cos(min_angle)
    out = np.empty((n, dim))
    for i in range(n):
        for _ in range(MAX_PLACEMENT_TRIES):
            v = rng.normal(size=dim)
            v /= np.linalg.norm(v)
            if i == 0 or np.max(out[:i] @ v) <= max_cos:
                out[i] = v
                break
        else:
            raise InfeasibleSeparation(
                f"could not place centroid {i + 1} of {n} at angle >= {min_angle:.3f} in {dim} dims")
    return out


def _labels(schema: TaskSchema, rng: np.random.Generator, fixed: Mapping[str, int] | None = None) -> dict:
    card = schema.cardinalities()
    labels = {}
    for t in schema.tasks:
        if fixed and t.name in fixed:
            labels[t.name] = (fixed[t.name],)
        elif t.multi_label:
            size = 2 if rng.random() < 0.1 else 1
            labels[t.name] = tuple(sorted(int(x) for x in rng.choice(card[t.name], size=size, replace=False)))
        else:
            labels[t.name] = (int(rng.integers(card[t.name])),)
    return labels


def gen_embeddings(spec: SynthSpec, schema: TaskSchema | None = None) -> SynthDataset:
    """Clustered embeddings, annotations and a valid train/query/gallery split.

    Appearance labels are fixed per identity; posture and expression labels
    are drawn per sample. Unidentified samples each get their own direction
    (separated like centroids) and land in train or gallery.
    """
    schema = schema or default_schema()
    counts = spec.id_counts()
    n_unid = spec.num_unidentified
    centroids = place_centroids(spec.num_ids + n_unid, spec.dim, spec.separation,
                                np.random.default_rng([spec.seed, 0]))
    split_rng = np.random.default_rng([spec.seed, 1])
    n_train_ids = int(round(spec.train_fraction * spec.num_ids))
    train_ids = set(split_rng.permutation(spec.num_ids)[:n_train_ids].tolist())

    rows, ann, membership = [], [], {}

    def emit(vec, pid, labels, subset):
        image_id = f"img{len(rows):06d}"
        rows.append(vec)
        ann.append(SampleAnnotation(image_id, pid, labels))
        membership[image_id] = subset

    for p, c in enumerate(counts):
        rng = np.random.default_rng([spec.seed, 2, p])
        pid = f"p{p:04d}"
        appearance = {t: l[0] for t, l in _labels(schema, rng).items() if t in APPEARANCE_TASKS}
        if p in train_ids:
            subsets = [Subset.TRAIN] * c
        else:
            n_query = min(max(1, int(round(spec.query_fraction * c))), c - 1)
            subsets = [Subset.QUERY] * n_query + [Subset.GALLERY] * (c - n_query)
        for s in subsets:
            vec = centroids[p] + spec.noise * rng.normal(size=spec.dim)
            emit(vec, pid, _labels(schema, rng, appearance), s)

    for u in range(n_unid):
        rng = np.random.default_rng([spec.seed, 3, u])
        vec = centroids[spec.num_ids + u] + spec.noise * rng.normal(size=spec.dim)
        subset = Subset.TRAIN if rng.random() < 0.5 else Subset.GALLERY
        emit(vec, None, _labels(schema, rng), subset)

    emb = EmbeddingMatrix(tuple(a.image_id for a in ann), np.array(rows).reshape(len(rows), spec.dim))
    return SynthDataset(emb, tuple(ann), DatasetSplit(membership), centroids)


def random_raster(rng: np.random.Generator, height: int = 64, width: int = 32, block: int = 8) -> np.ndarray:
    """A blocky random RGB image; distinct draws hash far apart."""
    coarse = rng.integers(0, 256, size=(height // block, width // block, 3), dtype=np.uint8)
    return np.kron(coarse, np.ones((block, block, 1), dtype=np.uint8))


# --- oracles ---------------------------------------------------------------

def _cos(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def oracle_retrieval(
    query, query_pids: Sequence, gallery, gallery_pids: Sequence,
    groups: Mapping[str, int] | None = None,
    query_ids: Sequence[str] | None = None,
    gallery_ids: Sequence[str] | None = None,
) -> tuple[float, float]:
    """Naive macro mAP and macro Rank-1: full re-sort per query, AP by counting."""
    query = [list(map(float, r)) for r in np.asarray(query)]
    gallery = [list(map(float, r)) for r in np.asarray(gallery)]
    groups = groups or {}
    per_id: dict = {}
    for qi, q in enumerate(query):
        qp = query_pids[qi]
        if qp is None:
            continue
        qid = query_ids[qi] if query_ids is not None else None
        candidates = []
        for gi, g in enumerate(gallery):
            gid = gallery_ids[gi] if gallery_ids is not None else None
            if qid in groups and gid in groups and groups[gid] == groups[qid]:
                continue
            candidates.append((-_cos(q, g), gi))
        candidates.sort()
        hits, precision_sum, rank1 = 0, 0.0, None
        for pos, (_, gi) in enumerate(candidates, start=1):
            if gallery_pids[gi] == qp:
                hits += 1
                precision_sum += hits / pos
                if rank1 is None:
                    rank1 = 1.0 if pos == 1 else 0.0
        if hits == 0:
            continue
        per_id.setdefault(qp, []).append((precision_sum / hits, rank1))
    if not per_id:
        raise ValueError("no scorable query")
    maps = [math.fsum(a for a, _ in v) / len(v) for _, v in sorted(per_id.items())]
    r1s = [math.fsum(r for _, r in v) / len(v) for _, v in sorted(per_id.items())]
    return math.fsum(maps) / len(maps), math.fsum(r1s) / len(r1s)


def oracle_map(query, query_pids, gallery, gallery_pids, groups=None, query_ids=None, gallery_ids=None) -> float:
    return oracle_retrieval(query, query_pids, gallery, gallery_pids, groups, query_ids, gallery_ids)[0]


def oracle_lts(hist: Sequence[int], k) -> float:
    """LTS_k by exhaustive search over every subset of classes."""
    y = np.asarray([int(c) for c in hist], dtype=np.int64)
    n = y.size
    if n > 20:
        raise TooLarge(f"exhaustive search over 2^{n} subsets refused; N must be <= 20")
    if n == 0 or y.sum() == 0:
        raise ValueError("empty histogram")
    kf = Fraction(repr(float(k))) if not isinstance(k, Fraction) else k
    masks = np.arange(1 << n, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(n)) & 1
    sums = bits @ y
    sizes = bits.sum(axis=1)
    feasible = sums * kf.denominator >= kf.numerator * int(y.sum())
    best = int(sizes[feasible].min())
    return float(Fraction(best) / (kf * n))
