"""Row-aligned embedding matrices and their binary file format.

Layout (little-endian): ``b"PIQE"``, u32 version (=1), u64 N, u32 D, then
N*D float32 values row-major. Image ids live in a sidecar CSV next to the
binary file (``<file>.ids.csv``, header ``image_id``), one row per matrix row.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import FormatError

MAGIC = b"PIQE"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


@dataclass(frozen=True)
class EmbeddingMatrix:
    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != len(self.ids):
            raise FormatError(f"{len(self.ids)} ids for a matrix of shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def subset(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        pos = {k: i for i, k in enumerate(self.ids)}
        rows = [pos[k] for k in ids]
        return EmbeddingMatrix(tuple(ids), self.values[rows])


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids.csv")


def write_embeddings(path, emb: EmbeddingMatrix) -> None:
    values = np.ascontiguousarray(emb.values, dtype="<f4")
    n, d = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d))
        fh.write(values.tobytes())
    with open(sidecar_path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id"])
        w.writerows([i] for i in emb.ids)


def read_embeddings(path) -> EmbeddingMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * n * d:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {4 * n * d}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)
    side = sidecar_path(path)
    try:
        with open(side, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise FormatError(f"{path}: missing sidecar {side.name}") from None
    if not rows or rows[0] != ["image_id"]:
        raise FormatError(f"{side}: header must be image_id")
    ids = tuple(r[0] for r in rows[1:])
    if len(ids) != n:
        raise FormatError(f"{side}: {len(ids)} ids for {n} rows")
    return EmbeddingMatrix(ids, values)
