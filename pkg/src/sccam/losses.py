"""Contrastive and cross-entropy losses as fused, differentiable ops.

Both contrastive losses share one kernel: a similarity matrix ``z z^T / tau``,
a per-anchor log-sum-exp over every other sample, and a positive mask. They
differ only in which samples count as positives.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DataError, ShapeError
from .tensor import Tensor, apply_op, log_softmax, softmax


def partner_indices(n: int) -> np.ndarray:
    """Augmentation partner of each row when originals and augmentations alternate."""
    if n % 2:
        raise ShapeError(f"paired batch must have even length, got {n}")
    return np.arange(n) ^ 1


def _contrastive(z: Tensor, positives: np.ndarray, tau: float, name: str) -> Tensor:
    if z.ndim != 2:
        raise ShapeError(f"{name}: embeddings must be 2-d (samples x dim), got {z.shape}")
    n = z.shape[0]
    if n < 2:
        raise ContractError(f"{name}: need at least 2 samples, got {n}")
    if not tau > 0:
        raise ContractError(f"{name}: temperature must be positive, got {tau}")
    counts = positives.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ContractError(f"{name}: anchor {int(empty[0])} has no positive sample")

    sim = z.data @ z.data.T / tau
    logits = sim.copy()
    np.fill_diagonal(logits, -np.inf)
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    log_prob = sim - lse[:, None]
    weights = positives / counts[:, None]
    loss = -np.sum(weights * np.where(positives, log_prob, 0.0))

    def bw(g):
        p = np.exp(logits - lse[:, None])  # softmax over a != i, zero on the diagonal
        gs = (p - weights) * float(g)
        return ((gs + gs.T) @ z.data / tau,)

    return apply_op(name, (z,), np.array(loss), bw)


def self_supervised_contrastive_loss(z: Tensor, tau: float,
                                     partners: Optional[Sequence[int]] = None) -> Tensor:
    """Sum over anchors of ``-log softmax`` of the anchor's single augmentation partner.

    ``partners[i]`` is the index of sample ``i``'s partner; by default samples
    ``2k`` and ``2k+1`` are partners.
    """
    n = z.shape[0]
    idx = partner_indices(n) if partners is None else np.asarray(partners)
    if idx.shape != (n,) or np.any(idx == np.arange(n)):
        raise ContractError("self_supervised_contrastive_loss: partners must map each sample to another one")
    pos = np.zeros((n, n), dtype=bool)
    pos[np.arange(n), idx] = True
    return _contrastive(z, pos, tau, "self_supervised_contrastive_loss")


def supervised_contrastive_loss(z: Tensor, labels: Sequence[int], tau: float) -> Tensor:
    """Supervised contrastive loss, summed over anchors, with ``1/|P(i)|`` outside the log.

    Positives of anchor ``i`` are all other samples with the same label,
    including its own augmentation partner.
    """
    y = np.asarray(labels)
    if y.shape != (z.shape[0],):
        raise ShapeError(f"supervised_contrastive_loss: {y.shape[0]} labels for {z.shape[0]} embeddings")
    pos = y[:, None] == y[None, :]
    np.fill_diagonal(pos, False)
    return _contrastive(z, pos, tau, "supervised_contrastive_loss")


def cross_entropy_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Batch mean of ``-log softmax(logits)[target]``, fused with the softmax."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_loss: logits must be B x M, got {logits.shape}")
    y = np.asarray(targets, dtype=np.int64)
    b, m = logits.shape
    if y.shape != (b,):
        raise ShapeError(f"cross_entropy_loss: {y.size} targets for batch of {b}")
    if np.any(y < 0) or np.any(y >= m):
        raise DataError(f"cross_entropy_loss: target out of range 0..{m - 1}")
    lp = log_softmax(logits.data, axis=1)
    loss = -lp[np.arange(b), y].mean()

    def bw(g):
        grad = softmax(logits.data, axis=1)
        grad[np.arange(b), y] -= 1.0
        return (grad * (float(g) / b),)

    return apply_op("cross_entropy", (logits,), np.array(loss), bw)
