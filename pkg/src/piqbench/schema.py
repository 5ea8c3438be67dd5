"""Task taxonomy, annotation records and dataset splits.

The taxonomy groups seven classification tasks into three aspects. Person
re-identification is the eighth task; it has no label vocabulary and is
toggled with ``TaskSchema.reid_enabled``.
"""

from __future__ import annotations

import csv
import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .exceptions import ParseError, SchemaError

TASK_ORDER = ("gender", "age", "physique", "height", "body", "arm", "expression")
APPEARANCE_TASKS = TASK_ORDER[:4]
POSTURE_TASKS = ("body", "arm")
EMOTION_TASKS = ("expression",)
ANNOTATION_HEADER = ("image_id", "person_id") + TASK_ORDER


class Aspect(str, enum.Enum):
    APPEARANCE = "Appearance"
    POSTURE = "Posture"
    EMOTION = "Emotion"


_EXPECTED_ASPECT = {
    **{t: Aspect.APPEARANCE for t in APPEARANCE_TASKS},
    **{t: Aspect.POSTURE for t in POSTURE_TASKS},
    "expression": Aspect.EMOTION,
}


class Subset(str, enum.Enum):
    TRAIN = "train"
    QUERY = "query"
    GALLERY = "gallery"


@dataclass(frozen=True)
class TaskDef:
    name: str
    aspect: Aspect
    labels: tuple[str, ...]
    multi_label: bool = False

    @property
    def cardinality(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TaskSchema:
    tasks: tuple[TaskDef, ...]
    reid_enabled: bool = True

    def __post_init__(self):
        _check_schema(self)

    def __getitem__(self, name: str) -> TaskDef:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tasks)

    def cardinalities(self) -> dict[str, int]:
        return {t.name: t.cardinality for t in self.tasks}

    def by_aspect(self, aspect: Aspect) -> tuple[TaskDef, ...]:
        return tuple(t for t in self.tasks if t.aspect is aspect)


def _check_schema(schema: TaskSchema) -> None:
    names = [t.name for t in schema.tasks]
    if len(names) != len(set(names)):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise SchemaError(f"duplicate task name(s): {dupes}")
    if len(names) != len(TASK_ORDER) or set(names) != set(TASK_ORDER):
        raise SchemaError(f"schema must define exactly the tasks {list(TASK_ORDER)}, got {names}")
    if tuple(names) != TASK_ORDER:
        raise SchemaError(f"tasks must be listed in the order {list(TASK_ORDER)}")
    for t in schema.tasks:
        if t.aspect is not _EXPECTED_ASPECT[t.name]:
            raise SchemaError(f"task {t.name!r} belongs to {_EXPECTED_ASPECT[t.name].value}, not {t.aspect.value}")
        if t.cardinality < 2:
            raise SchemaError(f"task {t.name!r} needs at least 2 labels")
        if len(set(t.labels)) != len(t.labels):
            raise SchemaError(f"task {t.name!r} has duplicate label names")
        if t.multi_label != (t.name == "expression"):
            kind = "multi-label" if t.name == "expression" else "single-label"
            raise SchemaError(f"task {t.name!r} must be {kind}")


def _task_from_dict(d: Mapping) -> TaskDef:
    try:
        name = d["name"]
        aspect = d["aspect"]
        labels = d["labels"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"task entry missing field: {exc}") from None
    if not isinstance(name, str) or not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ParseError(f"malformed task entry: {d!r}")
    try:
        aspect = Aspect(aspect)
    except ValueError:
        raise SchemaError(f"unknown aspect {aspect!r} for task {name!r}") from None
    multi = d.get("multi_label", False)
    if not isinstance(multi, bool):
        raise ParseError(f"multi_label of task {name!r} must be a boolean")
    return TaskDef(name=name, aspect=aspect, labels=tuple(labels), multi_label=multi)


def load_schema(document: str) -> TaskSchema:
    """Parse and validate a JSON schema document.

    Tasks may appear in any order; they are stored in canonical order.
    """
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"schema is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("tasks"), list):
        raise ParseError('schema document needs a top-level "tasks" array')
    tasks = [_task_from_dict(d) for d in raw["tasks"]]
    rank = {n: i for i, n in enumerate(TASK_ORDER)}
    if all(t.name in rank for t in tasks):
        tasks.sort(key=lambda t: rank[t.name])
    reid = raw.get("reid_enabled", True)
    if not isinstance(reid, bool):
        raise ParseError("reid_enabled must be a boolean")
    return TaskSchema(tasks=tuple(tasks), reid_enabled=reid)


def dump_schema(schema: TaskSchema) -> str:
    doc = {
        "reid_enabled": schema.reid_enabled,
        "tasks": [
            {"name": t.name, "aspect": t.aspect.value, "labels": list(t.labels), "multi_label": t.multi_label}
            for t in schema.tasks
        ],
    }
    return json.dumps(doc, indent=2)


def load_schema_file(path) -> TaskSchema:
    return load_schema(Path(path).read_text(encoding="utf-8"))


def default_schema() -> TaskSchema:
    """The shipped schema with placeholder vocabularies (gender 2, age 4, physique 3,
    height 3, body 5, arm 5, expression 7)."""
    text = resources.files("piqbench").joinpath("data/default_schema.json").read_text(encoding="utf-8")
    return load_schema(text)


@dataclass(frozen=True)
class SampleAnnotation:
    image_id: str
    person_id: str | None
    labels: Mapping[str, tuple[int, ...]]

    def label(self, task: str) -> int:
        """The single label index of a single-label task."""
        (idx,) = self.labels[task]
        return idx


@dataclass(frozen=True)
class DatasetSplit:
    membership: Mapping[str, Subset]

    def ids(self, subset: Subset) -> list[str]:
        return [k for k, v in self.membership.items() if v is subset]


@dataclass(frozen=True)
class Violation:
    image_id: str
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def format(self) -> str:
        return "\n".join(f"{v.image_id}: [{v.rule}] {v.message}" for v in self.violations)


def validate_annotations(
    schema: TaskSchema,
    records: Iterable[SampleAnnotation],
    split: DatasetSplit | None = None,
) -> ValidationReport:
    """Collect every invariant violation; an empty report means the data is clean.

    Violations are sorted, so the result does not depend on record order.
    """
    out: set[Violation] = set()
    records = list(records)
    seen: dict[str, int] = defaultdict(int)
    for rec in records:
        seen[rec.image_id] += 1
        for task in schema.tasks:
            idx = rec.labels.get(task.name)
            if idx is None:
                out.add(Violation(rec.image_id, "missing-label", f"no label for task {task.name!r}"))
                continue
            for i in idx:
                if not 0 <= i < task.cardinality:
                    out.add(Violation(rec.image_id, "label-range",
                                      f"{task.name} index {i} outside [0, {task.cardinality})"))
            if task.multi_label:
                if len(idx) < 1:
                    out.add(Violation(rec.image_id, "label-count", f"{task.name} needs at least one label"))
            elif len(idx) != 1:
                out.add(Violation(rec.image_id, "label-count",
                                  f"{task.name} is single-label but has {len(idx)} labels"))
        unknown = set(rec.labels) - set(schema.names)
        for name in sorted(unknown):
            out.add(Violation(rec.image_id, "unknown-task", f"label for unknown task {name!r}"))
    for image_id, n in seen.items():
        if n > 1:
            out.add(Violation(image_id, "duplicate-image", f"image_id appears {n} times"))

    if split is not None:
        out |= _split_violations(records, split)
    return ValidationReport(tuple(sorted(out, key=lambda v: (v.image_id, v.rule, v.message))))


def _split_violations(records: Sequence[SampleAnnotation], split: DatasetSplit) -> set[Violation]:
    out: set[Violation] = set()
    pid = {r.image_id: r.person_id for r in records}
    members: dict[Subset, dict[str, list[str]]] = {s: defaultdict(list) for s in Subset}
    for image_id, subset in split.membership.items():
        if image_id not in pid:
            out.add(Violation(image_id, "missing-annotation", f"{subset.value} image has no annotation"))
            continue
        if pid[image_id] is not None:
            members[subset][pid[image_id]].append(image_id)

    gallery = members[Subset.GALLERY]
    for p, images in members[Subset.QUERY].items():
        if p not in gallery:
            for image_id in images:
                out.add(Violation(image_id, "query-not-in-gallery", f"person {p!r} has no gallery images"))
    test_ids = set(members[Subset.QUERY]) | set(gallery)
    for p, images in members[Subset.TRAIN].items():
        if p in test_ids:
            for image_id in images:
                out.add(Violation(image_id, "train-test-overlap", f"person {p!r} appears in train and test"))
    return out


# --- CSV formats -----------------------------------------------------------

def _parse_indices(cell: str, *, where: str) -> tuple[int, ...]:
    cell = cell.strip()
    if not cell:
        return ()
    try:
        return tuple(int(x) for x in cell.split(";"))
    except ValueError:
        raise ParseError(f"{where}: expected integer label indices, got {cell!r}") from None


def read_annotations(path) -> list[SampleAnnotation]:
    """Read the annotation CSV (``image_id,person_id,gender,...,expression``)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ANNOTATION_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"{path}: annotation header lacks columns {sorted(missing)}")
        records = []
        for line, row in enumerate(reader, start=2):
            labels = {t: _parse_indices(row[t], where=f"{path}:{line}") for t in TASK_ORDER}
            records.append(SampleAnnotation(row["image_id"], row["person_id"] or None, labels))
    return records


def write_annotations(path, records: Iterable[SampleAnnotation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for r in records:
            w.writerow([r.image_id, r.person_id or ""] + [";".join(map(str, r.labels[t])) for t in TASK_ORDER])


def read_split(path) -> DatasetSplit:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or ()) < {"image_id", "subset"}:
            raise ParseError(f"{path}: split header must be image_id,subset")
        membership = {}
        for line, row in enumerate(reader, start=2):
            try:
                membership[row["image_id"]] = Subset(row["subset"].strip().lower())
            except ValueError:
                raise ParseError(f"{path}:{line}: unknown subset {row['subset']!r}") from None
    return DatasetSplit(membership)


def write_split(path, split: DatasetSplit) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "subset"])
        for image_id, subset in split.membership.items():
            w.writerow([image_id, subset.value])
