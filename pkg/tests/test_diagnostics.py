import numpy as np
import pytest

from repcl.corpus import Instance, make_synthetic_corpus
from repcl.diagnostics import (
    MineEstimator,
    MineResult,
    eig_spectrum,
    estimate_task_mi,
    mine_estimate,
)
from repcl.errors import InputError


# ---------------------------------------------------------------------------
# MINE core


def test_mine_rejects_tiny_or_mismatched_samples():
    with pytest.raises(InputError):
        mine_estimate(np.zeros((1, 2)), np.zeros((1, 2)), epochs=1, rng=np.random.default_rng(0))
    with pytest.raises(InputError):
        mine_estimate(np.zeros((4, 2)), np.zeros((5, 2)), epochs=1, rng=np.random.default_rng(0))


def test_mine_independent_variables_near_zero():
    rng = np.random.default_rng(42)
    u = rng.normal(size=(2048, 1))
    v = rng.normal(size=(2048, 1))
    res = mine_estimate(u, v, epochs=40, rng=np.random.default_rng(0))
    assert res.estimate_nats <= 0.05
    assert res.estimate_nats >= -0.05  # estimator noise stays small after convergence


def test_mine_correlated_gaussian_close_to_closed_form():
    rho = 0.9
    true_mi = -0.5 * np.log(1 - rho**2)  # 0.8304 nats
    rng = np.random.default_rng(7)
    xy = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=4096)
    res = mine_estimate(xy[:, :1], xy[:, 1:], epochs=60, rng=np.random.default_rng(0))
    assert abs(res.estimate_nats - true_mi) <= 0.15 * true_mi


def test_mine_deterministic_copy_grows_large():
    rng = np.random.default_rng(3)
    u = rng.normal(size=(4096, 8))
    res = mine_estimate(u, u.copy(), epochs=60, rng=np.random.default_rng(0))
    assert res.estimate_nats >= 2.0


def test_mine_curve_recorded_and_smoothed():
    rng = np.random.default_rng(1)
    u = rng.normal(size=(256, 2))
    v = u + 0.5 * rng.normal(size=(256, 2))
    res = mine_estimate(u, v, epochs=20, rng=np.random.default_rng(0))
    assert len(res.curve) == 20
    tail = res.curve[-2:]  # 10% of 20 epochs
    assert res.estimate_nats == pytest.approx(np.mean(tail))
    report = res.to_report("x_z")
    assert report["proxy"] == "frozen_embedding_mean"
    assert report["mode"] == "x_z"


def test_mine_estimator_tracks_marginal_ema():
    est = MineEstimator(2, 2, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    u, v = rng.normal(size=(64, 2)), rng.normal(size=(64, 2))
    assert est.ema_of_exp_marginal is None
    est.train_step(u, v, v[rng.permutation(64)])
    first = est.ema_of_exp_marginal
    assert first is not None
    est.train_step(u, v, v[rng.permutation(64)])
    assert est.ema_of_exp_marginal != first


# ---------------------------------------------------------------------------
# estimate_task_mi


class StubEncoder:
    """Model stand-in exposing just what estimate_task_mi consumes."""

    def __init__(self, reps, vocab=30, dim=4):
        self.reps = np.asarray(reps, dtype=np.float64)
        self.frozen_token_embedding = np.random.default_rng(0).normal(size=(vocab, dim))

    def encode_instances(self, instances):
        return self.reps[: len(instances)]


def instances_with_labels(labels, rng):
    return [
        Instance(tokens=tuple(int(t) for t in rng.integers(6, 30, size=6)), label=int(l))
        for l in labels
    ]


def test_constant_representation_gives_near_zero_mi():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(4), 32)
    instances = instances_with_labels(labels, rng)
    model = StubEncoder(np.ones((len(instances), 5)))
    res = estimate_task_mi(model, instances, "x_z", epochs=30, rng=np.random.default_rng(1))
    assert res.estimate_nats <= 0.05


def test_collapsed_classes_z_zplus_approaches_log_c():
    rng = np.random.default_rng(2)
    labels = np.repeat(np.arange(4), 20)
    instances = instances_with_labels(labels, rng)
    class_points = rng.normal(size=(4, 6)) * 2.0
    model = StubEncoder(class_points[labels])
    res = estimate_task_mi(
        model, instances, "z_zplus", epochs=60, rng=np.random.default_rng(0), max_pairs=1500
    )
    ln_c = np.log(4)
    assert 0.75 * ln_c <= res.estimate_nats <= 1.2 * ln_c


def test_z_zplus_skips_singleton_classes():
    rng = np.random.default_rng(3)
    labels = np.array([0, 0, 0, 0, 1])  # class 1 is singleton
    instances = instances_with_labels(labels, rng)
    model = StubEncoder(rng.normal(size=(5, 3)))
    res = estimate_task_mi(model, instances, "z_zplus", epochs=2, rng=np.random.default_rng(0))
    assert np.isfinite(res.estimate_nats)
    with pytest.raises(InputError):
        singles = instances_with_labels([0, 1, 2], rng)
        estimate_task_mi(StubEncoder(rng.normal(size=(3, 3))), singles, "z_zplus", epochs=1, rng=rng)


def test_unknown_mode_rejected():
    rng = np.random.default_rng(0)
    instances = instances_with_labels([0, 0, 1, 1], rng)
    with pytest.raises(InputError):
        estimate_task_mi(StubEncoder(np.zeros((4, 2))), instances, "z_x", epochs=1, rng=rng)


def test_training_raises_label_information():
    """z_y MI on separable data: a trained encoder beats a random one (2-seed mean)."""
    from repcl import autograd as ag
    from repcl.model import EncoderConfig, SequenceClassifier, make_batch
    from repcl.optim import Adam

    instances, vocab, _ = make_synthetic_corpus(4, 30, 12, 24, seed=5)
    config = EncoderConfig(vocab_size=vocab.size, embed_dim=16, num_layers=1, num_heads=2,
                           hidden_dim=16, max_seq_len=16)
    deltas = []
    for seed in (0, 1):
        model = SequenceClassifier(config, np.random.default_rng(seed))
        model.expand_head([0, 1, 2, 3], np.random.default_rng(seed))
        before = estimate_task_mi(model, instances, "z_y", epochs=25, rng=np.random.default_rng(seed))

        opt = Adam([(list(model.params.values()), 3e-3)])
        batch = make_batch(instances, config)
        targets = np.asarray([model.class_row(l) for l in batch.labels])
        for _ in range(60):
            opt.zero_grad()
            loss = ag.cross_entropy(model.classify(model.representations(batch)), targets)
            loss.backward()
            opt.step()
        after = estimate_task_mi(model, instances, "z_y", epochs=25, rng=np.random.default_rng(seed))
        deltas.append(after.estimate_nats - before.estimate_nats)
    assert np.mean(deltas) > 0


# ---------------------------------------------------------------------------
# eigen spectrum


def test_identical_representations_zero_spectrum():
    reps = np.tile([1.0, 2.0, 3.0], (5, 1))
    report = eig_spectrum(reps, top_k=3)
    np.testing.assert_allclose(report.eigenvalues, 0.0, atol=1e-12)


def test_two_point_spectrum_hand_value():
    report = eig_spectrum(np.array([[1.0, 0.0], [-1.0, 0.0]]), top_k=2)
    np.testing.assert_allclose(report.eigenvalues, [1.0, 0.0], atol=1e-12)


def test_spectrum_sums_to_trace():
    rng = np.random.default_rng(0)
    reps = rng.normal(size=(40, 6))
    report = eig_spectrum(reps, top_k=6)
    centered = reps - reps.mean(axis=0)
    trace = np.trace(centered.T @ centered / reps.shape[0])
    assert abs(sum(report.eigenvalues) - trace) <= 1e-8 * max(trace, 1.0)


def test_spectrum_rotation_invariance():
    rng = np.random.default_rng(1)
    reps = rng.normal(size=(30, 5))
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    a = eig_spectrum(reps, top_k=5).eigenvalues
    b = eig_spectrum(reps @ q, top_k=5).eigenvalues
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_spectrum_truncates_and_orders():
    rng = np.random.default_rng(2)
    reps = rng.normal(size=(50, 8)) * np.array([5, 4, 3, 2.5, 2, 1, 0.5, 0.1])
    report = eig_spectrum(reps, top_k=3)
    assert len(report.eigenvalues) == 3
    assert report.eigenvalues == sorted(report.eigenvalues, reverse=True)


def test_spectrum_requires_two_rows():
    with pytest.raises(InputError):
        eig_spectrum(np.ones((1, 4)), top_k=2)


def test_spectrum_csv(tmp_path):
    report = eig_spectrum(np.array([[1.0, 0.0], [-1.0, 0.0]]), top_k=2)
    path = tmp_path / "spec.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "rank,eigenvalue"
    assert lines[1].startswith("1,1")
