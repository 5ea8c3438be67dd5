"""Input validation helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionMismatch, LengthMismatch


def check_features(X, *, name: str = "X", min_samples: int = 1, n_features: int | None = None) -> np.ndarray:
    """Return ``X`` as a finite 2-D float64 array.

    Raises ``DimensionMismatch`` if ``n_features`` is given and the width differs.
    """
    X = check_array(
        X,
        dtype=np.float64,
        ensure_2d=True,
        ensure_min_samples=min_samples,
        ensure_all_finite=True,
        input_name=name,
    )
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"{name} has {X.shape[1]} columns, expected {n_features}")
    return X


def check_vector(x, *, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_same_length(a, b, names: tuple[str, str] = ("a", "b")) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"{names[0]} has length {len(a)} but {names[1]} has length {len(b)}")


def is_unlabeled(label) -> bool:
    """True for the reserved no-label values: ``None``, ``""``, NaN and negative integers."""
    if label is None:
        return True
    if isinstance(label, str):
        return label == ""
    if isinstance(label, (float, np.floating)):
        return bool(np.isnan(label)) or label < 0
    if isinstance(label, (int, np.integer)):
        return label < 0
    return False


def label_mask(labels) -> tuple[np.ndarray, np.ndarray]:
    """Encode arbitrary hashable labels as integer codes.

    Returns ``(codes, labeled)`` where unlabeled entries get code -1 and
    ``labeled`` is the boolean mask of entries carrying a real label.
    """
    codes = np.full(len(labels), -1, dtype=np.int64)
    seen: dict = {}
    for i, lab in enumerate(labels):
        if is_unlabeled(lab):
            continue
        codes[i] = seen.setdefault(lab, len(seen))
    return codes, codes >= 0
