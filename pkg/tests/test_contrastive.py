import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repcl import autograd as ag
from repcl.autograd import Tensor
from repcl.contrastive import FeatureQueue, ema_update, init_momentum, supinfonce_loss
from repcl.errors import ConfigError, StructuralError
from repcl.model import EncoderConfig, SequenceClassifier

from gradcheck import max_rel_error


# ---------------------------------------------------------------------------
# oracles: straightforward, definition-level implementations


def infonce_oracle(anchors, labels, cands, cand_labels, tau):
    """Vanilla single-positive InfoNCE: each anchor must have exactly one positive."""
    total = 0.0
    for i, z in enumerate(anchors):
        sims = cands @ z / tau
        pos = np.flatnonzero(cand_labels == labels[i])
        assert pos.size == 1
        neg = np.flatnonzero(cand_labels != labels[i])
        denom = np.exp(sims[pos[0]]) + np.exp(sims[neg]).sum()
        total += -np.log(np.exp(sims[pos[0]]) / denom)
    return total / len(anchors)


def supcon_oracle(anchors, labels, cands, cand_labels, tau):
    """SupCon: every positive's softmax denominator includes ALL positives."""
    total = 0.0
    for i, z in enumerate(anchors):
        sims = cands @ z / tau
        pos = np.flatnonzero(cand_labels == labels[i])
        neg = np.flatnonzero(cand_labels != labels[i])
        denom = np.exp(sims[pos]).sum() + np.exp(sims[neg]).sum()
        total += sum(-np.log(np.exp(sims[p]) / denom) for p in pos)
    return total / len(anchors)


def supinfonce_oracle(anchors, labels, cands, cand_labels, tau):
    """Definition-level SupInfoNCE: per positive, denominator = that positive + negatives."""
    total = 0.0
    active = 0
    for i, z in enumerate(anchors):
        sims = cands @ z / tau
        pos = np.flatnonzero(cand_labels == labels[i])
        neg = np.flatnonzero(cand_labels != labels[i])
        if pos.size == 0:
            continue
        active += 1
        for p in pos:
            denom = np.exp(sims[p]) + np.exp(sims[neg]).sum()
            total += -np.log(np.exp(sims[p]) / denom)
    return total / active


def random_features(rng, n, dim=8):
    f = rng.normal(size=(n, dim))
    return f / np.linalg.norm(f, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# supinfonce_loss


def test_no_negatives_gives_zero_loss():
    anchors = Tensor(np.array([[1.0, 0.0]]), requires_grad=True)
    cands = np.array([[0.6, 0.8]])
    loss = supinfonce_loss(anchors, np.array([3]), cands, np.array([3]), temperature=0.5)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_scalar_case_matches_hand_value():
    # one positive with z.z+/tau = 2, one negative with z.z-/tau = 0
    tau = 1.0
    anchors = Tensor(np.array([[2.0, 0.0]]), requires_grad=True)
    cands = np.array([[1.0, 0.0], [0.0, 1.0]])  # sims: 2.0 and 0.0
    labels = np.array([0])
    cand_labels = np.array([0, 1])
    loss = supinfonce_loss(anchors, labels, cands, cand_labels, tau)
    assert loss.item() == pytest.approx(np.log(1 + np.exp(-2.0)), abs=1e-12)


def test_matches_definition_oracle():
    rng = np.random.default_rng(0)
    anchors_np = random_features(rng, 6)
    cands = random_features(rng, 10)
    labels = rng.integers(0, 3, size=6)
    cand_labels = rng.integers(0, 3, size=10)
    loss = supinfonce_loss(Tensor(anchors_np), labels, cands, cand_labels, 0.2)
    oracle = supinfonce_oracle(anchors_np, labels, cands, cand_labels, 0.2)
    assert loss.item() == pytest.approx(oracle, abs=1e-10)


def test_single_positive_equals_infonce():
    rng = np.random.default_rng(1)
    anchors_np = random_features(rng, 5)
    labels = np.arange(5)
    # one positive each (same label), plus shared negatives with fresh labels
    pos = random_features(rng, 5)
    negs = random_features(rng, 7)
    cands = np.vstack([pos, negs])
    cand_labels = np.concatenate([labels, 100 + np.arange(7)])
    ours = supinfonce_loss(Tensor(anchors_np), labels, cands, cand_labels, 0.3).item()
    oracle = infonce_oracle(anchors_np, labels, cands, cand_labels, 0.3)
    assert ours == pytest.approx(oracle, abs=1e-9)


def test_differs_from_supcon_with_multiple_positives():
    rng = np.random.default_rng(2)
    anchors_np = random_features(rng, 2)
    labels = np.array([0, 1])
    cands = random_features(rng, 9)
    cand_labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])  # 3 positives per anchor
    ours = supinfonce_loss(Tensor(anchors_np), labels, cands, cand_labels, 0.2).item()
    supcon = supcon_oracle(anchors_np, labels, cands, cand_labels, 0.2)
    assert abs(ours - supcon) > 1e-3


def test_candidate_permutation_invariance():
    rng = np.random.default_rng(3)
    anchors_np = random_features(rng, 4)
    labels = rng.integers(0, 2, size=4)
    cands = random_features(rng, 12)
    cand_labels = rng.integers(0, 2, size=12)
    base = supinfonce_loss(Tensor(anchors_np), labels, cands, cand_labels, 0.1).item()
    for _ in range(5):
        perm = rng.permutation(12)
        shuffled = supinfonce_loss(
            Tensor(anchors_np), labels, cands[perm], cand_labels[perm], 0.1
        ).item()
        assert abs(shuffled - base) <= 1e-12


def test_gradient_flows_to_anchors_only_and_matches_fd():
    rng = np.random.default_rng(4)
    anchors = Tensor(random_features(rng, 4), requires_grad=True)
    cands_t = Tensor(random_features(rng, 8), requires_grad=True)  # stand-in for queue entries
    labels = rng.integers(0, 2, size=4)
    cand_labels = rng.integers(0, 2, size=8)

    def loss_fn():
        return supinfonce_loss(anchors, labels, cands_t.data, cand_labels, 0.2)

    assert max_rel_error(loss_fn, [anchors]) < 1e-6
    loss_fn().backward()
    assert cands_t.grad is None  # queue/momentum features never receive gradient


def test_monotonicity_in_similarities():
    # raising a positive similarity lowers the loss; raising a negative raises it
    anchors = np.array([[1.0, 0.0]])
    labels = np.array([0])
    cand_labels = np.array([0, 1])

    def loss_with(pos_sim, neg_sim):
        cands = np.array([[pos_sim, 0.0], [neg_sim, 0.0]])
        return supinfonce_loss(Tensor(anchors), labels, cands, cand_labels, 1.0).item()

    assert loss_with(1.5, 0.2) < loss_with(1.0, 0.2)
    assert loss_with(1.0, 0.8) > loss_with(1.0, 0.2)


def test_anchor_without_positive_is_excluded_from_mean():
    rng = np.random.default_rng(5)
    a = random_features(rng, 2)
    cands = random_features(rng, 3)
    # anchor 1's label appears nowhere among candidates
    labels = np.array([0, 9])
    cand_labels = np.array([0, 1, 1])
    full = supinfonce_loss(Tensor(a), labels, cands, cand_labels, 0.2).item()
    only_first = supinfonce_loss(Tensor(a[:1]), labels[:1], cands, cand_labels, 0.2).item()
    assert full == pytest.approx(only_first, abs=1e-12)


def test_temperature_must_be_positive():
    with pytest.raises(ConfigError):
        supinfonce_loss(Tensor(np.ones((1, 2))), np.array([0]), np.ones((1, 2)), np.array([0]), 0.0)


# ---------------------------------------------------------------------------
# EMA


def small_model(seed=0):
    config = EncoderConfig(vocab_size=16, embed_dim=8, num_layers=1, num_heads=2, hidden_dim=8, max_seq_len=8)
    return SequenceClassifier(config, np.random.default_rng(seed))


def test_ema_fixed_point_and_full_copy():
    model = small_model(0)
    momentum = small_model(1)
    snapshot = {k: v.data.copy() for k, v in momentum.params.items()}
    ema_update(model, momentum, eta=1.0)
    for name in model.momentum_param_names():
        np.testing.assert_allclose(momentum.params[name].data, snapshot[name], atol=0)
    ema_update(model, momentum, eta=0.0)
    for name in model.momentum_param_names():
        np.testing.assert_allclose(momentum.params[name].data, model.params[name].data, atol=0)


def test_ema_linear_interpolation():
    model = small_model(0)
    momentum = small_model(1)
    model.params["tok_emb"].data[:] = 0.0
    model.params["tok_emb"].data[0, 0] = 0.0
    momentum.params["tok_emb"].data[:] = 0.0
    momentum.params["tok_emb"].data[0, 0] = 1.0
    model.params["tok_emb"].data[0, 1] = 1.0
    momentum.params["tok_emb"].data[0, 1] = 0.0
    ema_update(model, momentum, eta=0.99)
    assert momentum.params["tok_emb"].data[0, 0] == pytest.approx(0.99)
    assert momentum.params["tok_emb"].data[0, 1] == pytest.approx(0.01)


def test_ema_geometric_convergence():
    model = small_model(0)
    momentum = init_momentum(model)
    for p in momentum.params.values():
        p.data += 1.0  # offset so the distance is nonzero
    eta = 0.9

    def distance():
        return np.sqrt(
            sum(
                ((momentum.params[n].data - model.params[n].data) ** 2).sum()
                for n in model.momentum_param_names()
            )
        )

    d0 = distance()
    for t in range(1, 26):
        ema_update(model, momentum, eta)
        assert abs(distance() - eta**t * d0) < 1e-10


def test_ema_shape_mismatch():
    model = small_model(0)
    momentum = init_momentum(model)
    momentum.params["tok_emb"] = Tensor(np.zeros((3, 3)), requires_grad=True)
    with pytest.raises(StructuralError):
        ema_update(model, momentum, 0.5)


def test_init_momentum_is_deep_copy():
    model = small_model(0)
    momentum = init_momentum(model)
    momentum.params["tok_emb"].data[:] = 123.0
    assert np.abs(model.params["tok_emb"].data).max() < 100


# ---------------------------------------------------------------------------
# queue


def test_queue_fifo_basic():
    q = FeatureQueue(capacity=4, dim=2)
    q.enqueue(np.arange(6).reshape(3, 2), np.array([0, 1, 2]))
    q.enqueue(np.arange(6, 12).reshape(3, 2), np.array([3, 4, 5]))
    assert len(q) == 4
    np.testing.assert_array_equal(q.labels(), [2, 3, 4, 5])
    np.testing.assert_array_equal(q.features()[0], [4, 5])


def test_queue_oversized_batch_keeps_last_capacity():
    q = FeatureQueue(capacity=4, dim=1)
    q.enqueue(np.arange(6).reshape(6, 1), np.arange(6))
    assert len(q) == 4
    np.testing.assert_array_equal(q.labels(), [2, 3, 4, 5])


def test_queue_empty_enqueue_noop():
    q = FeatureQueue(capacity=3, dim=2)
    q.enqueue(np.zeros((0, 2)), np.zeros(0, dtype=int))
    assert len(q) == 0
    assert q.features().shape == (0, 2)


def test_queue_dim_mismatch():
    q = FeatureQueue(capacity=3, dim=2)
    with pytest.raises(StructuralError):
        q.enqueue(np.zeros((1, 3)), np.array([0]))


def test_queue_entries_are_detached_copies():
    q = FeatureQueue(capacity=3, dim=2)
    feats = np.ones((1, 2))
    q.enqueue(feats, np.array([0]))
    feats[:] = 99.0
    np.testing.assert_array_equal(q.features(), [[1.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(
    capacity=st.integers(0, 16),
    batches=st.lists(st.integers(0, 9), min_size=0, max_size=12),
)
def test_queue_capacity_invariant_randomized(capacity, batches):
    q = FeatureQueue(capacity=capacity, dim=3)
    enqueued = 0
    expected_tail = []
    for n, size in enumerate(batches):
        feats = np.full((size, 3), float(n))
        labels = np.arange(enqueued, enqueued + size)
        q.enqueue(feats, labels)
        expected_tail.extend(labels.tolist())
        enqueued += size
        assert len(q) <= capacity
        assert len(q) == min(capacity, enqueued)  # enqueued - evicted == size
        np.testing.assert_array_equal(
            q.labels(), expected_tail[-capacity:] if capacity else []
        )
