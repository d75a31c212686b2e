"""Span-prediction loss, paired-batch contrastive loss, and their combination.

All cross-entropies are computed with max-subtraction log-sum-exp
stabilization.  The contrastive loss follows the dot-product form with no
temperature and no embedding normalization: logits ``Q = O @ P.T`` between the
pooled embeddings of a batch and its index-aligned translated pair batch,
then the average of row-wise and column-wise cross-entropy with the diagonal
as the true class.

``total_loss`` records the exact bookkeeping identity
``l_total == l_task + w * l_contrastive`` in the run's own float arithmetic,
so logs can be audited for it with equality, not tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


class LabelOutOfRangeError(InputError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    """Components of one optimization step's loss."""

    l_task: float
    l_contrastive: float
    w_contrastive: float
    l_total: float


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels: np.ndarray, width: int, head: str) -> None:
    if labels.min() < 0 or labels.max() >= width:
        raise LabelOutOfRangeError(
            f"{head} label outside [0, {width}): {labels.min()}..{labels.max()}"
        )


def task_loss(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    start_labels: np.ndarray,
    end_labels: np.ndarray,
) -> float:
    """Mean over the batch of (start CE + end CE) / 2."""
    loss, _, _ = task_loss_grads(start_logits, end_logits, start_labels, end_labels)
    return loss


def task_loss_grads(start_logits, end_logits, start_labels, end_labels):
    """Task loss plus its gradients with respect to both logit tensors."""
    start_logits = np.asarray(start_logits, dtype=np.float64)
    end_logits = np.asarray(end_logits, dtype=np.float64)
    start_labels = np.asarray(start_labels, dtype=np.int64)
    end_labels = np.asarray(end_labels, dtype=np.int64)
    if start_logits.shape != end_logits.shape or start_logits.ndim != 2:
        raise InputError("start/end logits must both be [n, t]")
    n, t = start_logits.shape
    _check_labels(start_labels, t, "start")
    _check_labels(end_labels, t, "end")
    rows = np.arange(n)
    loss = 0.0
    grads = []
    for logits, labels in ((start_logits, start_labels), (end_logits, end_labels)):
        logp = _log_softmax(logits)
        loss += float(-logp[rows, labels].mean()) / 2.0
        grad = _softmax(logits)
        grad[rows, labels] -= 1.0
        grads.append(grad / (2.0 * n))
    return loss, grads[0], grads[1]


def contrastive_loss(original_pooled: np.ndarray, paired_pooled: np.ndarray) -> float:
    """Symmetric cross-entropy over the pooled-embedding logits matrix."""
    loss, _, _ = contrastive_loss_grads(original_pooled, paired_pooled)
    return loss


def contrastive_loss_grads(original_pooled, paired_pooled):
    """Contrastive loss plus gradients with respect to both pooled matrices.

    With ``Q = O @ P.T`` the loss is
    ``(mean_i CE(Q[i, :], i) + mean_j CE(Q[:, j], j)) / 2``; a single-row
    batch scores exactly zero (the softmax of one logit is one).
    """
    O = np.asarray(original_pooled, dtype=np.float64)
    P = np.asarray(paired_pooled, dtype=np.float64)
    if O.ndim != 2 or O.shape != P.shape:
        raise InputError(
            f"pooled embeddings must share one [n, d] shape, got {O.shape} and {P.shape}"
        )
    n = O.shape[0]
    if n < 1:
        raise InputError("contrastive loss requires at least one row")
    logits = O @ P.T
    targets = np.arange(n)

    row_logp = _log_softmax(logits)
    col_logp = _log_softmax(logits.T)
    loss = float(
        (-row_logp[targets, targets].mean() - col_logp[targets, targets].mean()) / 2.0
    )

    row_grad = _softmax(logits)
    row_grad[targets, targets] -= 1.0
    col_grad = _softmax(logits.T)
    col_grad[targets, targets] -= 1.0
    d_logits = (row_grad + col_grad.T) / (2.0 * n)
    return loss, d_logits @ P, d_logits.T @ O


def total_loss(
    l_task: float,
    l_contrastive: float,
    w: float,
    apply_contrastive: bool = True,
) -> LossBreakdown:
    """Combine the components; a gated-off step records zero contrastive loss."""
    if w < 0:
        raise InputError(f"contrastive weight must be >= 0, got {w}")
    if not apply_contrastive:
        l_contrastive = 0.0
    l_total = l_task + w * l_contrastive
    return LossBreakdown(
        l_task=float(l_task),
        l_contrastive=float(l_contrastive),
        w_contrastive=float(w),
        l_total=float(l_total),
    )
