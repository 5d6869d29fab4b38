import json

import numpy as np
import pytest

from repcl import autograd as ag
from repcl.contrastive import FeatureQueue
from repcl.corpus import make_synthetic_corpus, split_tasks
from repcl.errors import ConfigError
from repcl.model import EncoderConfig, SequenceClassifier, make_batch
from repcl.replay import AdversarialConfig
from repcl.trainer import (
    ContinualRunState,
    TrainConfig,
    _make_optimizer,
    build_report,
    evaluate_seen_tasks,
    make_rng_streams,
    run_continual,
    train_initial_stage,
)
from repcl.trainer_hooks import EventLog
from repcl.metrics import AccuracyMatrix
from repcl.replay import MemoryBank


def tiny_setup(num_classes=4, num_tasks=2, per_class=12, stream_seed=0):
    instances, vocab, _ = make_synthetic_corpus(num_classes, per_class, 8, num_classes + 12, seed=77)
    stream = split_tasks(instances, num_tasks, num_classes // num_tasks, seed=stream_seed)
    encoder_cfg = EncoderConfig(
        vocab_size=vocab.size, embed_dim=16, num_layers=1, num_heads=2, hidden_dim=16, max_seq_len=8
    )
    return stream, encoder_cfg


def tiny_train_cfg(**kw):
    base = dict(
        lambda_con=0.05,
        lambda_xmlm=0.1,
        epochs_initial=2,
        epochs_replay=2,
        batch_size=8,
        memory_budget=3,
        queue_size=32,
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        tiny_train_cfg(lambda_con=-0.1)
    with pytest.raises(ConfigError):
        tiny_train_cfg(epochs_initial=0)
    with pytest.raises(ConfigError):
        tiny_train_cfg(temperature=0.0)
    with pytest.raises(ConfigError):
        tiny_train_cfg(ema_decay=1.5)
    with pytest.raises(ConfigError):
        tiny_train_cfg(infomax_variant=True, lambda_con=0.0)


def test_zero_weights_match_ce_only_reference():
    """lambda_con = lambda_xmlm = 0 must reproduce plain CE fine-tuning exactly."""
    stream, encoder_cfg = tiny_setup()
    task = stream.tasks[0]
    cfg = tiny_train_cfg(lambda_con=0.0, lambda_xmlm=0.0, epochs_initial=3)

    # package path
    streams = make_rng_streams(cfg.seed)
    model = SequenceClassifier(encoder_cfg, streams["model_init"])
    model.expand_head(sorted(task.label_set), streams["head_init"])
    state = ContinualRunState(
        model=model, bank=MemoryBank(cfg.memory_budget), matrix=AccuracyMatrix(), streams=streams
    )
    train_initial_stage(state, task, cfg, encoder_cfg)

    # independent CE-only loop sharing seed streams, batching, and optimizer layout
    ref_streams = make_rng_streams(cfg.seed)
    ref = SequenceClassifier(encoder_cfg, ref_streams["model_init"])
    ref.expand_head(sorted(task.label_set), ref_streams["head_init"])
    opt = _make_optimizer(ref, cfg)
    for _ in range(cfg.epochs_initial):
        order = ref_streams["batch_order"].permutation(len(task.train))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [task.train[i] for i in order[start : start + cfg.batch_size]]
            batch = make_batch(chunk, encoder_cfg)
            targets = np.asarray([ref.class_row(l) for l in batch.labels])
            opt.zero_grad()
            loss = ag.cross_entropy(ref.classify(ref.representations(batch)), targets)
            loss.backward()
            opt.step()

    for name in model.params:
        np.testing.assert_allclose(
            model.params[name].data, ref.params[name].data, atol=1e-10,
            err_msg=f"divergence in {name}",
        )


def test_single_class_task_contrastive_contributes_nothing():
    """With one class there are never negatives, so lambda_con > 0 changes nothing."""
    instances, vocab, _ = make_synthetic_corpus(2, 10, 8, 20, seed=3)
    only_class0 = [i for i in instances if i.label == 0]
    stream = split_tasks(only_class0, 1, 1, seed=0)
    encoder_cfg = EncoderConfig(
        vocab_size=vocab.size, embed_dim=16, num_layers=1, num_heads=2, hidden_dim=16, max_seq_len=8
    )

    finals = []
    for lam in (0.0, 0.7):
        cfg = tiny_train_cfg(lambda_con=lam, lambda_xmlm=0.0, epochs_initial=2, use_replay=False)
        state = run_continual(stream, encoder_cfg, cfg)
        finals.append({k: v.data.copy() for k, v in state.model.params.items()})
    for name in finals[0]:
        np.testing.assert_allclose(finals[0][name], finals[1][name], atol=1e-12)


def test_losses_finite_over_toy_run():
    stream, encoder_cfg = tiny_setup(per_class=16)
    cfg = tiny_train_cfg(epochs_initial=3, epochs_replay=2)
    state = run_continual(stream, encoder_cfg, cfg)
    for log in state.task_logs:
        if "mean_loss" in log and log["mean_loss"] is not None:
            assert np.isfinite(log["mean_loss"])


def test_step_order_contract():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg()
    events = EventLog()
    run_continual(stream, encoder_cfg, cfg, events=events)
    seq = events.events
    assert len(seq) % 3 == 0 and len(seq) > 0
    for i in range(0, len(seq), 3):
        assert seq[i : i + 3] == ["optim_step", "ema_update", "enqueue"]


def test_queue_reset_at_task_boundaries():
    stream, encoder_cfg = tiny_setup(num_classes=4, num_tasks=2)
    cfg = tiny_train_cfg()
    state = run_continual(stream, encoder_cfg, cfg)
    last_labels = set(state.queue.labels().tolist())
    assert last_labels <= set(stream.tasks[-1].label_set)


def test_momentum_reinitialized_from_main_each_task():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg(ema_decay=1.0)  # EMA freezes momentum at its init value
    state = run_continual(stream, encoder_cfg, cfg)
    # with eta=1 the momentum stays the snapshot taken right before the last
    # task's initial stage; it must differ from the trained main branch
    diffs = [
        np.abs(state.momentum.params[n].data - state.model.params[n].data).max()
        for n in state.model.momentum_param_names()
    ]
    assert max(diffs) > 0


def test_run_matrix_shape_and_coverage():
    stream, encoder_cfg = tiny_setup(num_classes=6, num_tasks=3, per_class=10)
    cfg = tiny_train_cfg()
    state = run_continual(stream, encoder_cfg, cfg)
    assert state.matrix.num_stages == 3
    assert [len(r) for r in state.matrix.to_lists()] == [1, 2, 3]
    seen = set(state.model.seen_classes)
    assert seen == set().union(*(t.label_set for t in stream.tasks))
    # bank ended with every class at or under budget
    assert state.bank.classes() == sorted(seen)
    assert all(len(state.bank.store[c]) <= cfg.memory_budget for c in seen)


def test_single_task_stream_fr_is_null():
    stream, encoder_cfg = tiny_setup(num_classes=2, num_tasks=1, per_class=10)
    cfg = tiny_train_cfg()
    state = run_continual(stream, encoder_cfg, cfg)
    report = build_report(state, stream, encoder_cfg, cfg)
    assert state.matrix.num_stages == 1
    assert report["fr"] is None
    assert len(report["acc_per_stage"]) == 1


def test_inference_ignores_momentum_queue_and_xmlm():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg()
    state = run_continual(stream, encoder_cfg, cfg)
    test_insts = [i for t in stream.tasks for i in t.test]
    before = state.model.predict(test_insts)
    state.momentum = None
    state.queue = None
    state.model.params["xmlm.w1"].data[:] = 1234.5  # garbage the discarded head
    state.model.params["xmlm.w2"].data[:] = -9.0
    after = state.model.predict(test_insts)
    np.testing.assert_array_equal(before, after)


def test_reproducibility_same_seed_same_report():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg()
    r1 = build_report(run_continual(stream, encoder_cfg, cfg), stream, encoder_cfg, cfg)
    r2 = build_report(run_continual(stream, encoder_cfg, cfg), stream, encoder_cfg, cfg)
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)


def test_different_seeds_differ():
    stream, encoder_cfg = tiny_setup()
    m1 = run_continual(stream, encoder_cfg, tiny_train_cfg(seed=0)).matrix.to_lists()
    m2 = run_continual(stream, encoder_cfg, tiny_train_cfg(seed=1)).matrix.to_lists()
    assert m1 != m2


def test_task1_snapshot_collected_after_first_task():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg()
    state = run_continual(stream, encoder_cfg, cfg)
    n_test_t1 = len(stream.tasks[0].test)
    assert state.task1_test_reprs.shape == (n_test_t1, encoder_cfg.repr_dim)
    assert state.task1_test_labels.shape == (n_test_t1,)


def test_infomax_variant_runs_with_dropout():
    stream, encoder_cfg = tiny_setup()
    encoder_cfg = EncoderConfig(**{**encoder_cfg.__dict__, "dropout": 0.1})
    cfg = tiny_train_cfg(infomax_variant=True)
    state = run_continual(stream, encoder_cfg, cfg)
    assert state.matrix.num_stages == 2
    # no momentum machinery in the infomax variant
    assert state.momentum is None and state.queue is None


def test_infomax_without_dropout_rejected():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg(infomax_variant=True)
    with pytest.raises(ConfigError):
        run_continual(stream, encoder_cfg, cfg)


def test_evaluate_seen_tasks_matches_manual_counts():
    stream, encoder_cfg = tiny_setup()
    cfg = tiny_train_cfg(epochs_initial=1, epochs_replay=1)
    state = run_continual(stream, encoder_cfg, cfg)
    evald = evaluate_seen_tasks(state.model, stream, 2)
    hits = total = 0
    for task in stream.tasks:
        preds = state.model.predict(task.test)
        labels = np.asarray([i.label for i in task.test])
        hits += int((preds == labels).sum())
        total += labels.size
    assert evald["micro"] == pytest.approx(hits / total)
