"""Loss kernels with closed-form values and analytic gradients.

Every kernel returns a :class:`LossResult`. ``grad`` is the gradient with
respect to the kernel's primary input (features, logits or task losses) and
``grad_aux`` holds any secondary gradient, such as the one with respect to
the uncertainty parameters.

Labels for metric-learning kernels may be any hashable values; ``None``,
``""``, NaN and negative integers mark unlabeled samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from ._validation import check_features, check_same_length, check_vector, label_mask
from .exceptions import (
    BatchTooSmall,
    EmptyInput,
    IndexOutOfRange,
    LengthMismatch,
    NotUnit,
    NoValidTriplet,
    RangeError,
    ZeroRow,
)

DEFAULT_MARGIN = 0.3
DEFAULT_ML_WEIGHT = 0.5


@dataclass(frozen=True)
class FeatureBatch:
    f: np.ndarray
    y: Sequence

    def __post_init__(self):
        object.__setattr__(self, "f", check_features(self.f, name="f"))
        check_same_length(self.f, self.y, ("f", "y"))


@dataclass(frozen=True)
class LossResult:
    value: float
    grad: np.ndarray
    grad_aux: np.ndarray | None = None


def normalize_rows(f) -> np.ndarray:
    f = check_features(f, name="f")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroRow(f"row {int(np.flatnonzero(norms[:, 0] == 0)[0])} has zero norm")
    return f / norms


def _normalize_backward(u: np.ndarray, norms: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Pull a gradient on unit rows ``u = f / |f|`` back onto ``f``."""
    radial = np.sum(grad_u * u, axis=1, keepdims=True)
    return (grad_u - radial * u) / norms


def euclid_cos_gap(a, b, tol: float = 1e-9) -> float:
    """``| |a-b| - sqrt(2 - 2 cos(a, b)) |`` for unit vectors ``a`` and ``b``."""
    a = check_vector(a, name="a")
    b = check_vector(b, name="b")
    for name, v in (("a", a), ("b", b)):
        if abs(np.linalg.norm(v) - 1.0) > tol:
            raise NotUnit(f"{name} has norm {np.linalg.norm(v)!r}")
    cos = float(a @ b)
    return abs(float(np.linalg.norm(a - b)) - math.sqrt(max(2.0 - 2.0 * cos, 0.0)))


def br_loss(batch: FeatureBatch) -> LossResult:
    """Batch Rank loss.

    Every labeled sample is an anchor; for each same-label partner ``j`` the
    loss adds ``-log softmax_c(cos(f_i, f_c))[j]`` where ``c`` runs over all
    other samples in the batch, unlabeled ones included. The sum is divided
    by the batch size. There are no hyperparameters.
    """
    f = batch.f
    n = f.shape[0]
    if n < 2:
        raise BatchTooSmall("BR loss needs at least two samples")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroRow("cannot take the cosine of a zero row")
    u = f / norms
    S = u @ u.T

    codes, labeled = label_mask(batch.y)
    pos = (codes[:, None] == codes[None, :]) & labeled[:, None]
    np.fill_diagonal(pos, False)
    n_pos = pos.sum(axis=1)
    if not n_pos.any():
        return LossResult(0.0, np.zeros_like(f))

    logits = S.copy()
    np.fill_diagonal(logits, -np.inf)
    log_p = log_softmax(logits, axis=1)
    np.fill_diagonal(log_p, 0.0)
    value = -float(np.sum(log_p[pos])) / n

    p = np.exp(log_p)
    np.fill_diagonal(p, 0.0)
    G = (n_pos[:, None] * p - pos) / n          # dL/dS
    grad_u = (G + G.T) @ u
    return LossResult(value, _normalize_backward(u, norms, grad_u))


def _pairwise_dist(u: np.ndarray) -> np.ndarray:
    sq = np.sum((u[:, None, :] - u[None, :, :]) ** 2, axis=2)
    return np.sqrt(sq)


def triplet_loss_batch_hard(batch: FeatureBatch, margin: float = DEFAULT_MARGIN) -> LossResult:
    """Batch-hard triplet loss on L2-normalized features.

    For each labeled anchor with at least one positive and one negative, the
    term is ``max(0, max_pos d - min_neg d + margin)``; the value is the mean
    over such anchors. Unlabeled samples only serve as negatives.
    """
    f = batch.f
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroRow("cannot normalize a zero row")
    u = f / norms
    D = _pairwise_dist(u)
    codes, labeled = label_mask(batch.y)
    n = len(codes)
    same = codes[:, None] == codes[None, :]
    pos = same & labeled[:, None]
    np.fill_diagonal(pos, False)
    neg = ~same & labeled[:, None]
    anchors = np.flatnonzero(pos.any(axis=1) & neg.any(axis=1))
    if anchors.size == 0:
        raise NoValidTriplet("no anchor has both a positive and a negative")

    hard_p = np.where(pos, D, -np.inf).argmax(axis=1)
    hard_n = np.where(neg, D, np.inf).argmin(axis=1)
    grad_u = np.zeros_like(u)
    total = 0.0
    for a in anchors:
        p, q = hard_p[a], hard_n[a]
        term = D[a, p] - D[a, q] + margin
        if term <= 0:
            continue
        total += term
        if D[a, p] > 0:
            g = (u[a] - u[p]) / D[a, p]
            grad_u[a] += g
            grad_u[p] -= g
        if D[a, q] > 0:
            g = (u[a] - u[q]) / D[a, q]
            grad_u[a] -= g
            grad_u[q] += g
    k = anchors.size
    return LossResult(total / k, _normalize_backward(u, norms, grad_u / k))


def softmax_ce(logits, target: int) -> LossResult:
    z = check_vector(logits, name="logits")
    if not 0 <= target < z.size:
        raise IndexOutOfRange(f"target {target} outside [0, {z.size})")
    value = float(logsumexp(z) - z[target])
    grad = softmax(z)
    grad[target] -= 1.0
    return LossResult(value, grad)


def bce_multilabel(logits, target_set) -> LossResult:
    """Mean sigmoid binary cross-entropy over labels."""
    z = check_vector(logits, name="logits")
    t = np.zeros_like(z)
    for j in target_set:
        if not 0 <= j < z.size:
            raise IndexOutOfRange(f"target index {j} outside [0, {z.size})")
        t[j] = 1.0
    # log(1 + e^z) - t z, computed stably
    value = float(np.mean(np.logaddexp(0.0, z) - t * z))
    grad = (expit(z) - t) / z.size
    return LossResult(value, grad)


def task_loss(cls: float, ml: float, ml_weight: float = DEFAULT_ML_WEIGHT) -> float:
    """Per-task loss: classification plus a fixed share of the metric-learning loss."""
    if ml_weight < 0:
        raise RangeError("ml_weight must be non-negative")
    return cls + ml_weight * ml


def total_loss_uncertainty(task_losses, s) -> LossResult:
    """``sum_i exp(-s_i) L_i + s_i``; ``grad`` is wrt the losses, ``grad_aux`` wrt ``s``."""
    L = check_vector(task_losses, name="task_losses")
    s = check_vector(s, name="s")
    if L.shape != s.shape:
        raise LengthMismatch(f"{L.size} task losses but {s.size} uncertainty parameters")
    w = np.exp(-s)
    value = math.fsum(w * L) + math.fsum(s)
    return LossResult(value, w, 1.0 - w * L)


def total_loss_average(task_losses) -> LossResult:
    L = check_vector(task_losses, name="task_losses")
    if L.size == 0:
        raise EmptyInput("no task losses")
    return LossResult(math.fsum(L) / L.size, np.full(L.size, 1.0 / L.size))


def finite_diff_check(
    loss_kernel: Callable,
    batch,
    epsilon: float = 1e-5,
    *,
    wrt: str = "grad",
    aux=None,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``batch`` is either a :class:`FeatureBatch` (features are perturbed) or an
    array passed straight to ``loss_kernel``. Set ``wrt="grad_aux"`` to check
    the secondary gradient; then ``aux`` is the perturbed argument and the
    kernel is called as ``loss_kernel(batch, aux)``.
    """
    if epsilon <= 0:
        raise RangeError("epsilon must be positive")

    if wrt == "grad_aux":
        x0 = np.array(aux, dtype=np.float64)
        call = lambda x: loss_kernel(batch, x)  # noqa: E731
    elif isinstance(batch, FeatureBatch):
        x0 = batch.f.copy()
        call = lambda x: loss_kernel(FeatureBatch(x, batch.y))  # noqa: E731
    else:
        x0 = np.array(batch, dtype=np.float64)
        call = loss_kernel

    analytic = np.asarray(getattr(call(x0), wrt), dtype=np.float64)
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        x = flat.copy()
        x[i] += epsilon
        up = call(x.reshape(x0.shape)).value
        x[i] -= 2 * epsilon
        down = call(x.reshape(x0.shape)).value
        numeric.reshape(-1)[i] = (up - down) / (2 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
