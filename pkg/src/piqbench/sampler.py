"""Seeded batch construction: fully random, P-K, and P-K mixed with unidentified samples."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ._validation import is_unlabeled
from .exceptions import NotEnoughIdentities, RangeError


class Strategy(str, enum.Enum):
    RANDOM = "random"
    PK = "pk"
    SHUFFLE_MIX = "shuffle"


@dataclass(frozen=True)
class SamplerConfig:
    strategy: Strategy = Strategy.RANDOM
    batch_size: int = 128
    P: int = 16
    K: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.batch_size < 1:
            raise RangeError("batch_size must be positive")
        if self.strategy is not Strategy.RANDOM:
            if self.P < 2 or self.K < 2:
                raise RangeError("P-K sampling needs P >= 2 and K >= 2")
            if self.P * self.K > self.batch_size:
                raise RangeError(f"P*K = {self.P * self.K} exceeds batch size {self.batch_size}")


def _rng(cfg: SamplerConfig, epoch: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, epoch])


def random_epoch(n: int, cfg: SamplerConfig, epoch: int = 0) -> list[list[int]]:
    """A seeded permutation of ``range(n)`` cut into batches; the last may be short."""
    if n < 1:
        raise RangeError("dataset is empty")
    perm = _rng(cfg, epoch).permutation(n).tolist()
    B = cfg.batch_size
    return [perm[i:i + B] for i in range(0, n, B)]


def _identity_index(person_ids: Sequence) -> tuple[dict[str, list[int]], list[int]]:
    """Split sample indices by identity. Items may be person ids or annotation records."""
    by_id: dict[str, list[int]] = {}
    unidentified = []
    for i, item in enumerate(person_ids):
        pid = getattr(item, "person_id", item)
        if is_unlabeled(pid):
            unidentified.append(i)
        else:
            by_id.setdefault(pid, []).append(i)
    return by_id, unidentified


def _pk_blocks(by_id: dict[str, list[int]], cfg: SamplerConfig, rng: np.random.Generator) -> list[list[int]]:
    if len(by_id) < cfg.P:
        raise NotEnoughIdentities(f"{len(by_id)} identities available, P = {cfg.P}")
    ids = sorted(by_id)
    order = rng.permutation(len(ids))
    blocks = []
    for start in range(0, len(ids) - cfg.P + 1, cfg.P):
        block = []
        for j in order[start:start + cfg.P]:
            members = by_id[ids[j]]
            replace = len(members) < cfg.K
            block.extend(int(x) for x in rng.choice(members, size=cfg.K, replace=replace))
        blocks.append(block)
    return blocks


def pk_batches(person_ids: Sequence[str | None], cfg: SamplerConfig, epoch: int = 0) -> list[list[int]]:
    """One epoch of P-K batches: identities are shuffled and taken P at a time
    (an incomplete last group is dropped), with K samples per identity drawn
    with replacement only when an identity has fewer than K. Unidentified
    samples never appear."""
    by_id, _ = _identity_index(person_ids)
    return _pk_blocks(by_id, cfg, _rng(cfg, epoch))


def shuffle_mix_batches(person_ids: Sequence[str | None], cfg: SamplerConfig, epoch: int = 0) -> list[list[int]]:
    """P-K batches topped up with unidentified samples, then shuffled.

    Each batch takes ``batch_size - P*K`` unidentified samples without
    replacement from a shuffled pool. Once the pool runs dry the remaining
    batches are plain P-K blocks (the batch that drains it may be part-filled).
    """
    by_id, pool = _identity_index(person_ids)
    rng = _rng(cfg, epoch)
    blocks = _pk_blocks(by_id, cfg, rng)
    pool = [pool[i] for i in rng.permutation(len(pool))]
    fill = cfg.batch_size - cfg.P * cfg.K
    out, cursor = [], 0
    for block in blocks:
        extra = pool[cursor:cursor + fill]
        cursor += len(extra)
        batch = block + extra
        out.append([batch[i] for i in rng.permutation(len(batch))])
    return out


class BatchSampler:
    """Iterates batches epoch after epoch; epoch ``e`` is seeded by ``(seed, e)``."""

    def __init__(self, cfg: SamplerConfig, person_ids: Sequence[str | None] | None = None, n: int | None = None):
        if cfg.strategy is Strategy.RANDOM and n is None:
            if person_ids is None:
                raise ValueError("random sampling needs n or person_ids")
            n = len(person_ids)
        if cfg.strategy is not Strategy.RANDOM and person_ids is None:
            raise ValueError("P-K sampling needs person_ids")
        self.cfg = cfg
        self.person_ids = person_ids
        self.n = n
        self.epoch = 0

    def epoch_batches(self, epoch: int) -> list[list[int]]:
        if self.cfg.strategy is Strategy.RANDOM:
            return random_epoch(self.n, self.cfg, epoch)
        if self.cfg.strategy is Strategy.PK:
            return pk_batches(self.person_ids, self.cfg, epoch)
        return shuffle_mix_batches(self.person_ids, self.cfg, epoch)

    def __iter__(self) -> Iterator[list[int]]:
        while True:
            yield from self.epoch_batches(self.epoch)
            self.epoch += 1

    def epochs(self, count: int) -> Iterator[tuple[int, list[int]]]:
        for e in range(count):
            for batch in self.epoch_batches(e):
                yield e, batch
