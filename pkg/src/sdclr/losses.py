"""Temperature-scaled contrastive similarity and the NT-Xent loss.

The loss operates on a batch of 2B projection vectors in which every vector
has exactly one positive partner; all other 2(B-1) vectors in the batch act
as its negatives. ``ntxent_loss`` returns both the scalar loss and its
analytic gradient with respect to the input vectors, so callers can chain
it into any backward pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


def similarity(u, v, tau):
    """exp(u.v / tau) for two equally-sized vectors."""
    if tau <= 0:
        raise InvalidParameterError("tau must be > 0")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise InvalidParameterError(f"shape mismatch {u.shape} vs {v.shape}")
    return float(np.exp(np.dot(u, v) / tau))


def block_pairs(n):
    """Pairing [0..B-1] <-> [B..2B-1] for a stacked two-view batch."""
    if n % 2:
        raise InvalidParameterError("pairing needs an even vector count")
    b = n // 2
    return np.concatenate([np.arange(b, n), np.arange(0, b)])


@dataclass(frozen=True)
class EmbeddingBatch:
    """Projection vectors plus the anchor->positive matching."""

    vectors: np.ndarray   # (N, d)
    pair_ids: np.ndarray  # (N,), a perfect matching without fixed points

    def __post_init__(self):
        vectors = np.asarray(self.vectors)
        pair_ids = np.asarray(self.pair_ids, dtype=np.int64)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "pair_ids", pair_ids)
        n = vectors.shape[0]
        if pair_ids.shape != (n,):
            raise InvalidParameterError("pair_ids must have one entry per vector")
        if np.any(pair_ids == np.arange(n)):
            raise InvalidParameterError("a vector cannot be its own positive")
        if not np.array_equal(pair_ids[pair_ids], np.arange(n)):
            raise InvalidParameterError("pair_ids is not a perfect matching")

    @property
    def n(self):
        return int(self.vectors.shape[0])

    def validate_norms(self, atol=1e-6):
        """Assert every row is unit length to within atol."""
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=atol):
            worst = float(np.abs(norms - 1.0).max())
            raise InvalidParameterError(
                f"vectors are not unit-normalized (max deviation {worst:.2e})"
            )


def ntxent_loss(batch, tau):
    """Mean NT-Xent loss over all anchors, with gradients.

    Per anchor i: -log s(v_i, v_p) / (s(v_i, v_p) + sum_neg s(v_i, v_neg))
    where s is the exponential similarity and the negatives are every other
    vector in the batch. Returns (loss, dloss/dvectors).

    A two-vector batch has no negatives; it yields loss 0, zero gradients,
    and a degenerate-batch warning.
    """
    if tau <= 0:
        raise InvalidParameterError("tau must be > 0")
    z = np.asarray(batch.vectors, dtype=np.float64)
    pairs = batch.pair_ids
    n = z.shape[0]
    if n < 4:
        warnings.warn("degenerate contrastive batch: no negatives available",
                      RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros_like(np.asarray(batch.vectors))

    logits = z @ z.T / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - row_max)
    denom = expl.sum(axis=1, keepdims=True)
    # loss_i = -logits[i, p_i] + logsumexp_i
    lse = np.log(denom[:, 0]) + row_max[:, 0]
    loss = float(np.mean(lse - logits[np.arange(n), pairs]))

    # d loss / d logits: softmax minus the positive indicator, averaged
    g = expl / denom
    g[np.arange(n), pairs] -= 1.0
    g /= n
    # logits = z z^T / tau contributes through both the row and column slot
    grads = (g @ z + g.T @ z) / tau
    return loss, grads.astype(batch.vectors.dtype, copy=False)
