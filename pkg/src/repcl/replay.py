"""Exemplar memory and the adversarial replay objective.

Exemplars are chosen per class by K-means over current-encoder representations
(closest instance to each centroid). Replay minimizes cross entropy plus a
multi-step adversarial loss built from norm-bounded perturbations of the token
embeddings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import backend
from .autograd import Tensor
from .corpus import Instance
from .errors import ConfigError, InputError
from .model import Batch, SequenceClassifier, make_batch
from .optim import Adam


@dataclass(frozen=True)
class AdversarialConfig:
    steps: int = 2
    step_size: float = 0.1
    epsilon: float = 0.2
    init: str = "zero"  # zero | uniform_scaled

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("adversarial steps must be >= 1")
        if self.step_size <= 0:
            raise ConfigError("adversarial step size must be > 0")
        if self.epsilon < 0:
            raise ConfigError("adversarial epsilon must be >= 0")
        if self.init not in ("zero", "uniform_scaled"):
            raise ConfigError(f"unknown adversarial init {self.init!r}")


class MemoryBank:
    """Per-class exemplar store with a fixed per-class budget."""

    def __init__(self, budget_per_class: int):
        if budget_per_class < 1:
            raise ConfigError("memory budget must be >= 1")
        self.budget = budget_per_class
        self.store: dict[int, list[Instance]] = {}

    def update_class(self, class_id: int, exemplars: list[Instance]) -> None:
        if len(exemplars) > self.budget:
            raise InputError(f"{len(exemplars)} exemplars exceed budget {self.budget}")
        if any(inst.label != class_id for inst in exemplars):
            raise InputError("exemplar label does not match its class slot")
        self.store[class_id] = list(exemplars)

    def classes(self) -> list[int]:
        return sorted(self.store)

    def all_instances(self) -> list[Instance]:
        return [inst for c in self.classes() for inst in self.store[c]]

    def __len__(self) -> int:
        return sum(len(v) for v in self.store.values())

    def to_manifest(self) -> dict:
        """JSON-able map class id -> corpus uids, so banks are replayable."""
        return {str(c): [inst.uid for inst in self.store[c]] for c in self.classes()}

    @classmethod
    def from_manifest(cls, manifest: dict, corpus: list[Instance], budget: int) -> "MemoryBank":
        bank = cls(budget)
        for key, uids in manifest.items():
            bank.update_class(int(key), [corpus[u] for u in uids])
        return bank


def kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding. Returns (centroids, assignment)."""
    n = points.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k must be in [1, {n}], got {k}")
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a chosen centroid
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        assign, _ = backend.kmeans_assign(points, centroids)
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[assign == j]
            if members.shape[0] > 0:
                new_centroids[j] = members.mean(axis=0)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    assign, _ = backend.kmeans_assign(points, centroids)
    return centroids, assign


def select_exemplars(
    instances: list[Instance],
    representations: np.ndarray,
    budget: int,
    rng: np.random.Generator,
) -> list[Instance]:
    """Cluster representations with k = min(budget, n); keep the instance
    nearest each centroid, ties to the lowest corpus index."""
    n = len(instances)
    if n == 0:
        raise InputError("cannot select exemplars from an empty class")
    if representations.shape[0] != n:
        raise InputError("representations/instances length mismatch")
    if n <= budget:
        return list(instances)

    centroids, assign = kmeans(representations, budget, rng)
    order_key = np.asarray(
        [inst.uid if inst.uid >= 0 else i for i, inst in enumerate(instances)], dtype=np.int64
    )
    selected: list[Instance] = []
    for j in range(budget):
        members = np.flatnonzero(assign == j)
        if members.size == 0:
            continue
        dists = ((representations[members] - centroids[j]) ** 2).sum(axis=1)
        d_min = dists.min()
        tied = members[dists == d_min]
        pick = tied[np.argmin(order_key[tied])]
        selected.append(instances[int(pick)])
    return selected


def project_ball(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Radial projection onto the Frobenius epsilon-ball."""
    norm = np.linalg.norm(delta)
    if norm > epsilon:
        if epsilon == 0.0:
            return np.zeros_like(delta)
        return delta * (epsilon / norm)
    return delta


def freelb_loss(
    model: SequenceClassifier,
    batch: Batch,
    cfg: AdversarialConfig,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Multi-step adversarial loss on embedding-space perturbations.

    Accumulates (1/K) * sum_t grad_theta L_t into the model parameters' .grad
    (on top of whatever is already there) and returns the averaged loss plus
    the perturbation trajectory [delta_0, ..., delta_K].

    Each step evaluates L(F(x + delta_t), y), then moves delta along its
    normalized gradient by step_size and projects back onto the epsilon-ball.
    Pad positions never carry perturbation.
    """
    B, L = batch.ids.shape
    d = model.config.embed_dim
    valid = (np.arange(L)[None, :] < batch.lengths[:, None]).astype(np.float64)[:, :, None]

    if cfg.init == "zero":
        delta = np.zeros((B, L, d))
    else:
        if rng is None:
            raise InputError("uniform_scaled init needs an rng")
        delta = rng.uniform(-1.0, 1.0, size=(B, L, d)) * valid
        norm = np.linalg.norm(delta)
        if norm > 0:
            delta *= cfg.epsilon * rng.random() / norm
    delta = project_ball(delta * valid, cfg.epsilon)

    targets = np.asarray([model.class_row(lab) for lab in batch.labels], dtype=np.int64)
    trajectory = [delta.copy()]
    total = 0.0
    inv_k = 1.0 / cfg.steps
    for _ in range(cfg.steps):
        delta_leaf = Tensor(delta, requires_grad=True)
        emb = ag.add(model.embed_ids(batch.ids), ag.mul_const(delta_leaf, valid))
        z = model.pool_hidden(model.hidden_from_embedded(emb, batch.lengths), batch)
        loss = ag.cross_entropy(model.classify(z), targets)
        total += loss.item()
        loss.backward(np.asarray(inv_k))  # parameter grads accumulate at weight 1/K
        g = delta_leaf.grad
        g_norm = np.linalg.norm(g) if g is not None else 0.0
        if g_norm > 0:
            delta = project_ball((delta + cfg.step_size * g / g_norm) * valid, cfg.epsilon)
        trajectory.append(delta.copy())
    return total * inv_k, trajectory


def replay_stage(
    model: SequenceClassifier,
    bank: MemoryBank,
    optimizer: Adam,
    epochs: int,
    batch_size: int,
    adv_cfg: AdversarialConfig | None,
    rng: np.random.Generator,
) -> dict:
    """Train on the balanced memory bank: cross entropy plus (optionally) the
    adversarial loss. Each epoch visits every stored exemplar exactly once."""
    exemplars = bank.all_instances()
    if not exemplars:
        warnings.warn("memory bank is empty; replay stage is a no-op", stacklevel=2)
        return {"steps": 0, "mean_loss": None}

    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(exemplars))
        for start in range(0, len(order), batch_size):
            chunk = [exemplars[i] for i in order[start : start + batch_size]]
            batch = make_batch(chunk, model.config)
            targets = np.asarray([model.class_row(lab) for lab in batch.labels], dtype=np.int64)
            optimizer.zero_grad()
            z = model.representations(batch)
            ce = ag.cross_entropy(model.classify(z), targets)
            ce.backward()
            step_loss = ce.item()
            if adv_cfg is not None:
                adv_loss, _ = freelb_loss(model, batch, adv_cfg, rng)
                step_loss += adv_loss
            optimizer.step()
            losses.append(step_loss)
    return {"steps": len(losses), "mean_loss": float(np.mean(losses))}
