"""Split a D-dimensional feature vector into per-aspect and per-task ranges.

Nine contiguous slots tile ``[0, D)`` in this order: gender, age, physique,
height, appearance_residual, body_own, arm_own, posture_shared, expression.
The re-id view is the whole appearance block. Body and arm each read their
own slot plus the shared posture slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ._validation import check_features
from .exceptions import RangeError, TooFewDims, UnknownView
from .schema import TaskSchema, default_schema

SLOTS = (
    "gender", "age", "physique", "height", "appearance_residual",
    "body_own", "arm_own", "posture_shared", "expression",
)
APPEARANCE_SLOTS = SLOTS[:5]


def largest_remainder(weights: Sequence[int], total: int, minimum: int = 1) -> list[int]:
    """Apportion ``total`` seats proportionally to ``weights`` (Hamilton's method).

    Every slot gets at least ``minimum`` seats: slots whose share falls below
    the minimum are pinned to it and the rest are re-apportioned. Remainder
    ties go to the earlier slot. Arithmetic is exact.
    """
    w = [int(x) for x in weights]
    if any(x < 0 for x in w):
        raise RangeError("weights must be non-negative")
    if total < minimum * len(w):
        raise TooFewDims(f"{total} seats cannot give {len(w)} slots {minimum} each")
    seats = [0] * len(w)
    active = list(range(len(w)))
    remaining = total
    while True:
        wsum = sum(w[i] for i in active)
        if wsum == 0:
            quotas = {i: Fraction(remaining, len(active)) for i in active}
        else:
            quotas = {i: Fraction(w[i] * remaining, wsum) for i in active}
        alloc = {i: int(q) for i, q in quotas.items()}
        extra = remaining - sum(alloc.values())
        by_rem = sorted(active, key=lambda i: (-(quotas[i] - alloc[i]), i))
        for i in by_rem[:extra]:
            alloc[i] += 1
        short = [i for i in active if alloc[i] < minimum]
        if not short:
            for i in active:
                seats[i] = alloc[i]
            return seats
        for i in short:
            seats[i] = minimum
            remaining -= minimum
        active = [i for i in active if i not in short]


@dataclass(frozen=True)
class FeatureAllocation:
    total_dims: int
    slots: Mapping[str, tuple[int, int]]

    def indices(self, view: str) -> np.ndarray:
        """Column indices of a slot or derived view, ascending."""
        if view in self.slots:
            parts = [view]
        elif view == "reid":
            parts = list(APPEARANCE_SLOTS)
        elif view in ("body", "arm"):
            parts = [f"{view}_own", "posture_shared"]
        else:
            raise UnknownView(f"unknown view {view!r}")
        return np.concatenate([np.arange(*self.slots[p]) for p in parts])

    @property
    def views(self) -> dict[str, list[int]]:
        return {v: self.indices(v).tolist() for v in ("reid", "body", "arm")}

    def widths(self) -> dict[str, int]:
        return {k: b - a for k, (a, b) in self.slots.items()}

    def to_dict(self) -> dict:
        return {
            "total_dims": self.total_dims,
            "slots": {k: list(v) for k, v in self.slots.items()},
            "views": self.views,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def slot_weights(
    schema: TaskSchema | None = None,
    residual_weight: int | None = None,
    shared_weight: int | None = None,
) -> list[int]:
    schema = schema or default_schema()
    card = schema.cardinalities()
    if residual_weight is None:
        mean = Fraction(sum(card[t] for t in ("gender", "age", "physique", "height")), 4)
        # round half up; Python's round() would go to even
        residual_weight = int(mean + Fraction(1, 2))
    if shared_weight is None:
        shared_weight = min(card["body"], card["arm"])
    return [card["gender"], card["age"], card["physique"], card["height"], residual_weight,
            card["body"], card["arm"], shared_weight, card["expression"]]


def allocation_from_weights(total_dims: int, weights: Sequence[int]) -> FeatureAllocation:
    if len(weights) != len(SLOTS):
        raise ValueError(f"expected {len(SLOTS)} weights")
    if total_dims < len(SLOTS):
        raise TooFewDims(f"need at least {len(SLOTS)} dimensions, got {total_dims}")
    dims = largest_remainder(weights, total_dims)
    bounds = np.concatenate([[0], np.cumsum(dims)]).tolist()
    return FeatureAllocation(total_dims, {s: (bounds[i], bounds[i + 1]) for i, s in enumerate(SLOTS)})


def plan_allocation(
    D: int,
    schema: TaskSchema | None = None,
    residual_weight: int | None = None,
    shared_weight: int | None = None,
) -> FeatureAllocation:
    """Give each task a share of ``D`` proportional to its label count.

    The residual appearance slot defaults to the rounded mean of the four
    appearance cardinalities; the shared posture slot to the smaller of the
    body and arm cardinalities.
    """
    return allocation_from_weights(D, slot_weights(schema, residual_weight, shared_weight))


def project(features, alloc: FeatureAllocation, view: str) -> np.ndarray:
    X = check_features(features, name="features", n_features=alloc.total_dims)
    return X[:, alloc.indices(view)]
