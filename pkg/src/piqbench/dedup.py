"""Perceptual hashing and near-duplicate grouping.

Hash recipe: BT.601 luma, bilinear resize to 32x32, orthonormal 2-D DCT-II,
keep the top-left 8x8 block (DC included), threshold at the block median,
pack bits row-major starting from the least significant bit.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.fft import dctn

from .exceptions import ImageDecodeError, ParseError, RangeError, TooSmall

logger = logging.getLogger(__name__)

HASH_SIZE = 8
RESIZE = 32
DEFAULT_THRESHOLD = 10
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
_BT601 = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PHash64:
    value: int
    image_id: str = ""

    def __post_init__(self):
        if not 0 <= self.value < 1 << 64:
            raise ValueError("hash value must fit in 64 bits")

    @property
    def hex(self) -> str:
        return f"{self.value:016x}"

    @classmethod
    def from_hex(cls, text: str, image_id: str = "") -> "PHash64":
        try:
            return cls(int(text, 16), image_id)
        except ValueError:
            raise ParseError(f"not a 64-bit hex hash: {text!r}") from None


def to_luma(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        return arr[..., :3].astype(np.float64) @ _BT601
    if arr.ndim == 2:
        return arr.astype(np.float64)
    raise ImageDecodeError(f"expected an HxWx3 raster, got shape {arr.shape}")


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centre alignment."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    W = np.zeros((n_out, n_in))
    W[np.arange(n_out), lo] += 1 - frac
    W[np.arange(n_out), hi] += frac
    return W


def bilinear_resize(gray: np.ndarray, size: int = RESIZE) -> np.ndarray:
    h, w = gray.shape
    return _interp_matrix(h, size) @ gray @ _interp_matrix(w, size).T


def dct_block(image) -> np.ndarray:
    """The 8x8 low-frequency DCT block the hash thresholds."""
    gray = to_luma(image)
    if min(gray.shape) < HASH_SIZE:
        raise TooSmall(f"image is {gray.shape[1]}x{gray.shape[0]}, need at least {HASH_SIZE}x{HASH_SIZE}")
    coeffs = dctn(bilinear_resize(gray), type=2, norm="ortho")[:HASH_SIZE, :HASH_SIZE]
    # snap transform round-off so flat regions give exact zeros
    return np.round(coeffs, 6) + 0.0


def bits_to_int(bits: np.ndarray) -> int:
    return sum(1 << i for i, b in enumerate(np.ravel(bits)) if b)


def phash(image, image_id: str = "") -> PHash64:
    block = dct_block(image)
    return PHash64(bits_to_int(block > np.median(block)), image_id)


def load_image(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from None


def hash_directory(directory) -> list[PHash64]:
    """Hash every PNG/JPEG in ``directory``; the file stem is the image id."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [phash(load_image(p), p.stem) for p in paths]


def hamming(a, b) -> int:
    a = a.value if isinstance(a, PHash64) else int(a)
    b = b.value if isinstance(b, PHash64) else int(b)
    return (a ^ b).bit_count()


def pairwise_hamming(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.uint64)
    return np.bitwise_count(v[:, None] ^ v[None, :]).astype(np.int64)


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def components(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


@dataclass(frozen=True)
class GroupAssignment:
    groups: Mapping[str, int]
    threshold: int

    def to_json(self) -> str:
        return json.dumps({"threshold": self.threshold, "groups": dict(self.groups)}, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "GroupAssignment":
        try:
            d = json.loads(text)
            groups = {str(k): int(v) for k, v in d["groups"].items()}
            return cls(groups, int(d["threshold"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"malformed groups document: {exc}") from None


def _brute_pairs(values: np.ndarray, threshold: int, chunk: int = 2048) -> Iterable[tuple[int, int]]:
    n = len(values)
    for start in range(0, n, chunk):
        block = values[start:start + chunk]
        d = np.bitwise_count(block[:, None] ^ values[None, :])
        ii, jj = np.nonzero(d <= threshold)
        ii = ii + start
        keep = jj > ii
        yield from zip(ii[keep].tolist(), jj[keep].tolist())


def _band_pairs(values: np.ndarray, threshold: int, bands: int = 4) -> Iterable[tuple[int, int]]:
    """Candidate pairs via multi-index hashing over 16-bit bands.

    If two hashes are within ``threshold`` then some band differs in at most
    ``threshold // bands`` bits, so probing each band's neighbourhood of that
    radius finds every true pair. Candidates are verified exactly.
    """
    width = 64 // bands
    mask = (1 << width) - 1
    radius = threshold // bands
    flips = [sum(1 << b for b in combo)
             for r in range(radius + 1) for combo in itertools.combinations(range(width), r)]
    ints = [int(v) for v in values]
    tables: list[dict[int, list[int]]] = []
    for b in range(bands):
        table: dict[int, list[int]] = {}
        for i, v in enumerate(ints):
            table.setdefault((v >> (b * width)) & mask, []).append(i)
        tables.append(table)
    for i, v in enumerate(ints):
        cand: set[int] = set()
        for b, table in enumerate(tables):
            key = (v >> (b * width)) & mask
            for f in flips:
                cand.update(j for j in table.get(key ^ f, ()) if j > i)
        for j in sorted(cand):
            if (v ^ ints[j]).bit_count() <= threshold:
                yield i, j


def group_labels(values, threshold: int = DEFAULT_THRESHOLD, *, prefilter: bool = False) -> np.ndarray:
    """Connected-component labels for hash values, in input order.

    Components are numbered by their smallest member index.
    """
    if not 0 <= threshold <= 64:
        raise RangeError(f"threshold must be in [0, 64], got {threshold}")
    v = np.asarray([int(x) for x in values], dtype=np.uint64)
    uf = UnionFind(len(v))
    pairs = _band_pairs(v, threshold) if prefilter else _brute_pairs(v, threshold)
    for i, j in pairs:
        uf.union(i, j)
    labels = np.empty(len(v), dtype=np.int64)
    for gid, members in enumerate(sorted((sorted(c) for c in uf.components()), key=lambda c: c[0])):
        labels[members] = gid
    return labels


def group(hashes: Sequence[PHash64], threshold: int = DEFAULT_THRESHOLD, *, prefilter: bool = False) -> GroupAssignment:
    """Group hashes whose Hamming distance is within ``threshold``, transitively.

    Group ids are dense and follow the order of each group's smallest image id,
    so the output does not depend on input order.
    """
    ids = [h.image_id for h in hashes]
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    order = sorted(range(len(hashes)), key=lambda i: ids[i])
    labels = group_labels([hashes[i].value for i in order], threshold, prefilter=prefilter)
    return GroupAssignment({ids[i]: int(labels[k]) for k, i in enumerate(order)}, threshold)


def read_hash_csv(path) -> list[PHash64]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or ()) < {"image_id", "hash_hex"}:
            raise ParseError(f"{path}: header must be image_id,hash_hex")
        return [PHash64.from_hex(row["hash_hex"], row["image_id"]) for row in reader]


def write_hash_csv(path, hashes: Iterable[PHash64]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "hash_hex"])
        for h in hashes:
            w.writerow([h.image_id, h.hex])
