"""Cross masked-language-modeling: mask a same-class partner sentence and
reconstruct it aided by the anchor's representation.

The masked partner is encoded by the SAME encoder parameters as the main
branch, so this objective shapes the shared representation space through two
routes: the decoder consumes the anchor representation directly, and the
encoder sees gradients from the masked forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Instance, MASK_ID, NUM_SPECIAL, TaskSpec
from .errors import InputError
from .model import Batch, SequenceClassifier


@dataclass(frozen=True)
class MaskedSample:
    masked_tokens: tuple[int, ...]
    target_positions: tuple[int, ...]  # strictly increasing
    target_ids: tuple[int, ...]
    partner_of: int  # batch index of the anchor instance


def sample_partner(anchor: Instance, task: TaskSpec, rng: np.random.Generator) -> Instance:
    """Uniform same-class instance, excluding the anchor unless it is alone."""
    pool = [inst for inst in task.train if inst.label == anchor.label]
    if not pool:
        raise InputError(f"no training instances for class {anchor.label}")
    others = [inst for inst in pool if inst is not anchor and inst.uid != anchor.uid]
    if not others:
        return anchor
    return others[int(rng.integers(len(others)))]


def maskable_positions(tokens) -> np.ndarray:
    """Positions eligible for masking: everything except special/marker tokens."""
    arr = np.asarray(tokens)
    return np.flatnonzero(arr >= NUM_SPECIAL)


def mask_tokens(partner: Instance, proportion: float, rng: np.random.Generator, partner_of: int = 0) -> MaskedSample:
    """Mask exactly max(1, round(p * n_maskable)) positions, chosen uniformly."""
    if not 0.0 <= proportion <= 1.0:
        raise InputError(f"mask proportion must be in [0, 1], got {proportion}")
    cand = maskable_positions(partner.tokens)
    if cand.size == 0:
        raise InputError("sequence has no maskable tokens")
    n_mask = max(1, int(round(proportion * cand.size)))
    chosen = np.sort(rng.choice(cand, size=n_mask, replace=False))
    masked = list(partner.tokens)
    targets = []
    for pos in chosen:
        targets.append(masked[pos])
        masked[pos] = MASK_ID
    return MaskedSample(
        masked_tokens=tuple(masked),
        target_positions=tuple(int(p) for p in chosen),
        target_ids=tuple(targets),
        partner_of=partner_of,
    )


def build_masked_batch(samples: list[MaskedSample], pad_id: int) -> tuple[Batch, np.ndarray, np.ndarray, np.ndarray]:
    """Padded batch of masked partners plus flat (batch_idx, position, target) arrays."""
    if not samples:
        raise InputError("no masked samples")
    lengths = np.asarray([len(s.masked_tokens) for s in samples], dtype=np.int64)
    max_len = int(lengths.max())
    ids = np.full((len(samples), max_len), pad_id, dtype=np.int64)
    pos_b, pos_t, targets = [], [], []
    for i, s in enumerate(samples):
        ids[i, : lengths[i]] = s.masked_tokens
        for p, tgt in zip(s.target_positions, s.target_ids):
            pos_b.append(i)
            pos_t.append(p)
            targets.append(tgt)
    batch = Batch(ids=ids, lengths=lengths, labels=np.zeros(len(samples), dtype=np.int64))
    return (
        batch,
        np.asarray(pos_b, dtype=np.int64),
        np.asarray(pos_t, dtype=np.int64),
        np.asarray(targets, dtype=np.int64),
    )


def xmlm_loss(
    model: SequenceClassifier,
    anchor_repr: Tensor,
    samples: list[MaskedSample],
    zero_anchor: bool = False,
) -> Tensor:
    """Mean cross entropy over all masked positions.

    anchor_repr rows are indexed by each sample's partner_of. zero_anchor
    replaces the anchor slice with zeros, turning the objective into plain
    masked-token reconstruction (the "conventional MLM" ablation).
    """
    from .corpus import PAD_ID

    batch, pos_b, pos_t, targets = build_masked_batch(samples, PAD_ID)
    if pos_b.size == 0:
        raise InputError("masked samples contain no targets")
    anchor_idx = np.asarray([samples[i].partner_of for i in range(len(samples))], dtype=np.int64)
    hidden = model.hidden_states(batch.ids, batch.lengths)
    z = anchor_repr
    if zero_anchor:
        z = Tensor(np.zeros_like(anchor_repr.data))
    # map flat positions onto the anchor row of each sample
    z_for_samples = z if anchor_idx.size == 0 else ag.gather_rows(z, anchor_idx)
    logits = model.xmlm_logits(z_for_samples, hidden, pos_b, pos_t)
    return ag.cross_entropy(logits, targets)
