"""Momentum branch, bounded FIFO feature queue, and the multi-positive
contrastive loss.

Candidates for an anchor are the momentum features of the current batch plus
everything in the queue; the anchor's own momentum twin counts as a positive.
Each positive gets its own softmax whose denominator holds that positive and
all different-label candidates only (other positives are excluded).
"""

from __future__ import annotations

from collections import deque

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, StructuralError
from .model import SequenceClassifier


def init_momentum(model: SequenceClassifier) -> SequenceClassifier:
    """Fresh momentum branch: deep copy of the main branch encoder+projection."""
    return model.clone()


def ema_update(model: SequenceClassifier, momentum: SequenceClassifier, eta: float) -> None:
    """theta' <- eta * theta' + (1 - eta) * theta over encoder+projection params."""
    for name in model.momentum_param_names():
        main = model.params[name].data
        mom = momentum.params[name].data
        if main.shape != mom.shape:
            raise StructuralError(f"momentum param {name} shape {mom.shape} != main {main.shape}")
        mom *= eta
        mom += (1.0 - eta) * main


class FeatureQueue:
    """Bounded FIFO of (unit feature vector, label). Entries never carry grad."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 0:
            raise ConfigError("queue capacity must be >= 0")
        self.capacity = capacity
        self.dim = dim
        self._entries: deque[tuple[np.ndarray, int]] = deque()

    def __len__(self) -> int:
        return len(self._entries)

    def enqueue(self, features: np.ndarray, labels: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise StructuralError(
                f"queue expects (n, {self.dim}) features, got {features.shape}"
            )
        if features.shape[0] != len(labels):
            raise StructuralError("features and labels length mismatch")
        for vec, lab in zip(features, labels):
            self._entries.append((vec.copy(), int(lab)))
        while len(self._entries) > self.capacity:
            self._entries.popleft()

    def clear(self) -> None:
        self._entries.clear()

    def features(self) -> np.ndarray:
        if not self._entries:
            return np.zeros((0, self.dim))
        return np.stack([v for v, _ in self._entries])

    def labels(self) -> np.ndarray:
        return np.asarray([l for _, l in self._entries], dtype=np.int64)


def supinfonce_loss(
    anchors: Tensor,
    anchor_labels: np.ndarray,
    cand_feats: np.ndarray,
    cand_labels: np.ndarray,
    temperature: float,
) -> Tensor:
    """Multi-positive InfoNCE over anchor/candidate similarities.

    For anchor z with positives z+_i and negatives z-:
        sum_i -log( exp(z.z+_i/t) / (exp(z.z+_i/t) + sum_- exp(z.z-/t)) )
    averaged over anchors that have at least one positive. Anchors without a
    positive contribute nothing. Candidates are plain arrays, so no gradient
    ever flows into queue or momentum features.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    cand_feats = np.asarray(cand_feats, dtype=np.float64)
    cand_labels = np.asarray(cand_labels, dtype=np.int64)
    anchor_labels = np.asarray(anchor_labels, dtype=np.int64)
    if cand_feats.shape[0] == 0:
        return Tensor(0.0)

    pos_mask = anchor_labels[:, None] == cand_labels[None, :]
    neg_mask = ~pos_mask
    if not pos_mask.any():
        return Tensor(0.0)

    sims = ag.scale(ag.matmul(anchors, Tensor(cand_feats.T)), 1.0 / temperature)
    return _supinfonce_from_sims(sims, pos_mask, neg_mask)


def _supinfonce_from_sims(sims: Tensor, pos_mask: np.ndarray, neg_mask: np.ndarray) -> Tensor:
    """Fused loss over a similarity matrix with hand gradient.

    Stable evaluation per anchor i: with M_i = max similarity, e_ij = exp(s_ij - M_i),
    T_i = sum over negatives of e_ij, each positive p contributes
    log(e_ip + T_i) + M_i - s_ip.
    """
    s = sims.data
    has_pos = pos_mask.any(axis=1)
    n_active = int(has_pos.sum())

    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    t_neg = (e * neg_mask).sum(axis=1, keepdims=True)

    per_pos = np.log(e + t_neg) + m - s  # only meaningful where pos_mask
    loss_val = (per_pos * pos_mask)[has_pos].sum() / n_active

    def bwd(g):
        if not sims.requires_grad:
            return
        ratio_pos = e / (e + t_neg)  # d log(e_ip + T_i) / d s_ip
        grad = np.zeros_like(s)
        grad += pos_mask * (ratio_pos - 1.0)
        # negatives enter every positive's denominator of the same anchor
        pos_inv = (pos_mask / (e + t_neg)).sum(axis=1, keepdims=True)
        grad += neg_mask * e * pos_inv
        grad *= has_pos[:, None] / n_active
        ag._accum(sims, g * grad)

    return ag._make(np.asarray(loss_val), (sims,), bwd)
