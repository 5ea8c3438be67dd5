"""End-to-end evaluation: ground truth + predictions + embeddings -> report JSON."""

from __future__ import annotations

import csv
import json
import logging
from typing import Iterable, Mapping, Sequence

from .embedding import EmbeddingMatrix
from .exceptions import ParseError
from .metrics import EvaluationReport, evaluate_retrieval, macro_f1_multilabel, macro_f1_single
from .schema import (
    APPEARANCE_TASKS,
    POSTURE_TASKS,
    TASK_ORDER,
    SampleAnnotation,
    TaskSchema,
    _parse_indices,
)

logger = logging.getLogger(__name__)

PREDICTION_HEADER = ("image_id",) + TASK_ORDER


def read_predictions(path) -> dict[str, dict[str, tuple[int, ...]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"{path}: prediction header lacks columns {sorted(missing)}")
        out = {}
        for line, row in enumerate(reader, start=2):
            out[row["image_id"]] = {t: _parse_indices(row[t], where=f"{path}:{line}") for t in TASK_ORDER}
    return out


def write_predictions(path, predictions: Mapping[str, Mapping[str, Sequence[int]]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for image_id, labels in predictions.items():
            w.writerow([image_id] + [";".join(map(str, labels[t])) for t in TASK_ORDER])


def prediction_problems(schema: TaskSchema, truth: Mapping[str, SampleAnnotation],
                        predictions: Mapping[str, Mapping[str, Sequence[int]]]) -> list[str]:
    problems = []
    for image_id, labels in sorted(predictions.items()):
        if image_id not in truth:
            problems.append(f"{image_id}: prediction for an image without ground truth")
            continue
        for t in schema.tasks:
            idx = labels[t.name]
            if any(not 0 <= i < t.cardinality for i in idx):
                problems.append(f"{image_id}: {t.name} prediction outside [0, {t.cardinality})")
            elif not t.multi_label and len(idx) != 1:
                problems.append(f"{image_id}: {t.name} needs exactly one predicted label")
    return problems


def classification_scores(schema: TaskSchema, truth: Mapping[str, SampleAnnotation],
                          predictions: Mapping[str, Mapping[str, Sequence[int]]]) -> dict[str, float]:
    ids = sorted(predictions)
    scores = {}
    for t in schema.tasks:
        gt = [truth[i].labels[t.name] for i in ids]
        pred = [predictions[i][t.name] for i in ids]
        if t.multi_label:
            scores[t.name] = macro_f1_multilabel(pred, gt, t.cardinality, t.name).macro_f1
        else:
            scores[t.name] = macro_f1_single([p[0] for p in pred], [g[0] for g in gt],
                                             t.cardinality, t.name).macro_f1
    return scores


def build_report(
    schema: TaskSchema,
    annotations: Iterable[SampleAnnotation],
    predictions: Mapping[str, Mapping[str, Sequence[int]]],
    query: EmbeddingMatrix,
    gallery: EmbeddingMatrix,
    groups: Mapping[str, int] | None = None,
    *,
    n_jobs: int = 1,
) -> EvaluationReport:
    truth = {a.image_id: a for a in annotations}
    pid = lambda i: truth[i].person_id  # noqa: E731
    retrieval = evaluate_retrieval(
        query.values, query.ids, [pid(i) for i in query.ids],
        gallery.values, gallery.ids, [pid(i) for i in gallery.ids],
        groups, n_jobs=n_jobs,
    )
    f1 = classification_scores(schema, truth, predictions)
    return EvaluationReport(
        retrieval.macro_map, retrieval.macro_rank1, retrieval.macro_rank5,
        {t: f1[t] for t in APPEARANCE_TASKS},
        {t: f1[t] for t in POSTURE_TASKS},
        f1["expression"],
    )


def _emit(obj, indent: int = 0) -> str:
    if isinstance(obj, dict):
        pad = "  " * (indent + 1)
        items = [f"{pad}{json.dumps(k)}: {_emit(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    return f"{float(obj):.6f}"


def report_to_json(report: EvaluationReport) -> str:
    """Serialize with every number printed to exactly six decimals."""
    return _emit(report.to_dict()) + "\n"


def report_from_json(text: str) -> EvaluationReport:
    try:
        return EvaluationReport.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed report: {exc}") from None
