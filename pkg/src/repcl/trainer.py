"""Two-stage continual training over a class-incremental task stream.

For each task: expand the classifier head, run the initial stage on the new
task's data (cross entropy plus optional contrastive and cross-MLM terms),
select exemplars into the memory bank, run the replay stage over the balanced
bank, then evaluate on every seen task's test set.

The step order inside the initial stage is a pinned contract:
optimizer step, then the momentum EMA update, then enqueueing the momentum
features of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .contrastive import FeatureQueue, ema_update, init_momentum, supinfonce_loss
from .corpus import TaskSpec, TaskStream
from .errors import ConfigError
from .generative import mask_tokens, sample_partner, xmlm_loss
from .metrics import AccuracyMatrix, forgetting_rate
from .model import EncoderConfig, SequenceClassifier, make_batch
from .optim import Adam
from .replay import AdversarialConfig, MemoryBank, replay_stage, select_exemplars
from .trainer_hooks import EventLog

RNG_STREAMS = (
    "model_init",
    "head_init",
    "batch_order",
    "partner",
    "mask",
    "exemplar",
    "replay",
    "dropout",
)


def make_rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named independent generator streams, stable across feature toggles."""
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(RNG_STREAMS, children)}


@dataclass(frozen=True)
class TrainConfig:
    lambda_con: float = 0.05
    lambda_xmlm: float = 0.1
    epochs_initial: int = 10
    epochs_replay: int = 10
    batch_size: int = 16
    lr_encoder: float = 1e-4
    lr_heads: float = 1e-3
    temperature: float = 0.1
    ema_decay: float = 0.99
    queue_size: int = 512
    mask_prob: float = 0.3
    memory_budget: int = 10
    adv: AdversarialConfig = field(default_factory=AdversarialConfig)
    seed: int = 0
    use_replay: bool = True
    use_adversarial: bool = True
    mlm_instead_of_xmlm: bool = False
    infomax_variant: bool = False
    queue_reset_per_task: bool = True

    def __post_init__(self):
        if self.lambda_con < 0 or self.lambda_xmlm < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.epochs_initial < 1 or self.epochs_replay < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError("ema_decay must be in [0, 1]")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError("mask_prob must be in [0, 1]")
        if self.queue_size < 0:
            raise ConfigError("queue_size must be >= 0")
        if self.memory_budget < 1:
            raise ConfigError("memory_budget must be >= 1")
        if self.infomax_variant and (self.mlm_instead_of_xmlm or self.lambda_con <= 0):
            raise ConfigError("infomax_variant needs lambda_con > 0 and plain xmlm flags")


@dataclass
class ContinualRunState:
    model: SequenceClassifier
    bank: MemoryBank
    matrix: AccuracyMatrix
    streams: dict[str, np.random.Generator]
    momentum: SequenceClassifier | None = None
    queue: FeatureQueue | None = None
    task_logs: list[dict] = field(default_factory=list)
    task1_test_reprs: np.ndarray | None = None
    task1_test_labels: np.ndarray | None = None


def _make_optimizer(model: SequenceClassifier, cfg: TrainConfig) -> Adam:
    enc = [model.params[n] for n in model.encoder_param_names()]
    heads = [model.params[n] for n in model.head_param_names()]
    return Adam([(enc, cfg.lr_encoder), (heads, cfg.lr_heads)])


def train_initial_stage(
    state: ContinualRunState,
    task: TaskSpec,
    cfg: TrainConfig,
    encoder_cfg: EncoderConfig,
    events: EventLog | None = None,
) -> None:
    """Epochs over the task's training data minimizing
    L_ce + lambda_con * L_con + lambda_xmlm * L_xmlm."""
    model = state.model
    use_con = cfg.lambda_con > 0 and not cfg.infomax_variant
    use_xmlm = cfg.lambda_xmlm > 0 and not cfg.infomax_variant
    if cfg.infomax_variant and encoder_cfg.dropout <= 0:
        raise ConfigError("infomax_variant needs encoder dropout > 0 for stochastic views")

    if use_con:
        if state.momentum is None:
            raise ConfigError("initial stage with contrastive loss needs a momentum branch")
        momentum, queue = state.momentum, state.queue

    optimizer = _make_optimizer(model, cfg)
    train = task.train
    losses = []
    for _ in range(cfg.epochs_initial):
        order = state.streams["batch_order"].permutation(len(train))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train[i] for i in order[start : start + cfg.batch_size]]
            batch = make_batch(chunk, encoder_cfg)
            targets = np.asarray([model.class_row(l) for l in batch.labels], dtype=np.int64)

            z = model.representations(batch)
            loss = ag.cross_entropy(model.classify(z), targets)

            momentum_feats = None
            if use_con:
                with ag.no_grad():
                    zm = momentum.project(momentum.representations(batch)).data
                momentum_feats = zm
                cand_feats = np.concatenate([zm, queue.features()], axis=0)
                cand_labels = np.concatenate([batch.labels, queue.labels()])
                con = supinfonce_loss(
                    model.project(z), batch.labels, cand_feats, cand_labels, cfg.temperature
                )
                loss = ag.add(loss, ag.scale(con, cfg.lambda_con))

            if use_xmlm:
                samples = []
                for i, inst in enumerate(chunk):
                    partner = sample_partner(inst, task, state.streams["partner"])
                    samples.append(
                        mask_tokens(partner, cfg.mask_prob, state.streams["mask"], partner_of=i)
                    )
                gen = xmlm_loss(model, z, samples, zero_anchor=cfg.mlm_instead_of_xmlm)
                loss = ag.add(loss, ag.scale(gen, cfg.lambda_xmlm))

            if cfg.infomax_variant:
                z1 = model.representations(batch, drop_rng=state.streams["dropout"])
                with ag.no_grad():
                    z2 = model.representations(batch, drop_rng=state.streams["dropout"])
                    view2 = model.project(z2).data
                ids = np.arange(batch.size)
                info = supinfonce_loss(model.project(z1), ids, view2, ids, cfg.temperature)
                loss = ag.add(loss, ag.scale(info, cfg.lambda_con))

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if events is not None:
                events.record("optim_step")
            if use_con:
                ema_update(model, momentum, cfg.ema_decay)
                if events is not None:
                    events.record("ema_update")
                queue.enqueue(momentum_feats, batch.labels)
                if events is not None:
                    events.record("enqueue")
            losses.append(loss.item())
            if not np.isfinite(losses[-1]):
                raise FloatingPointError(f"non-finite training loss at step {len(losses)}")
    state.task_logs.append({"task": task.index, "stage": "initial", "mean_loss": float(np.mean(losses))})


def update_memory(state: ContinualRunState, task: TaskSpec, cfg: TrainConfig) -> None:
    """K-means exemplar selection on current-encoder representations, per class."""
    model = state.model
    for c in sorted(task.label_set):
        members = [inst for inst in task.train if inst.label == c]
        reps = model.encode_instances(members)
        exemplars = select_exemplars(members, reps, cfg.memory_budget, state.streams["exemplar"])
        state.bank.update_class(c, exemplars)


def train_replay_stage(
    state: ContinualRunState, cfg: TrainConfig, encoder_cfg: EncoderConfig
) -> None:
    adv = cfg.adv if cfg.use_adversarial else None
    optimizer = _make_optimizer(state.model, cfg)
    stats = replay_stage(
        state.model,
        state.bank,
        optimizer,
        cfg.epochs_replay,
        cfg.batch_size,
        adv,
        state.streams["replay"],
    )
    stats.update({"stage": "replay"})
    state.task_logs.append(stats)


def evaluate_seen_tasks(model: SequenceClassifier, stream: TaskStream, upto: int) -> dict:
    """Per-task accuracies plus pooled micro / per-task macro averages."""
    per_task, hits_total, n_total = [], 0, 0
    for task in stream.tasks[:upto]:
        preds = model.predict(task.test)
        labels = np.asarray([inst.label for inst in task.test])
        hits = int((preds == labels).sum())
        per_task.append(hits / labels.size)
        hits_total += hits
        n_total += labels.size
    return {
        "per_task": per_task,
        "micro": hits_total / n_total,
        "macro": float(np.mean(per_task)),
    }


def run_continual(
    stream: TaskStream,
    encoder_cfg: EncoderConfig,
    cfg: TrainConfig,
    events: EventLog | None = None,
) -> ContinualRunState:
    """Full continual pass over the stream; fills the accuracy matrix row by row."""
    streams = make_rng_streams(cfg.seed)
    model = SequenceClassifier(encoder_cfg, streams["model_init"])
    state = ContinualRunState(
        model=model,
        bank=MemoryBank(cfg.memory_budget),
        matrix=AccuracyMatrix(),
        streams=streams,
    )
    use_con = cfg.lambda_con > 0 and not cfg.infomax_variant
    for task in stream.tasks:
        model.expand_head(sorted(task.label_set), streams["head_init"])
        if use_con:
            state.momentum = init_momentum(model)
            if state.queue is None:
                state.queue = FeatureQueue(cfg.queue_size, encoder_cfg.proj_dim)
            if cfg.queue_reset_per_task:
                state.queue.clear()
        train_initial_stage(state, task, cfg, encoder_cfg, events=events)
        if cfg.use_replay:
            update_memory(state, task, cfg)
            train_replay_stage(state, cfg, encoder_cfg)
        evald = evaluate_seen_tasks(model, stream, task.index)
        state.matrix.add_row(evald["per_task"])
        state.task_logs.append(
            {"task": task.index, "stage": "eval", "micro": evald["micro"], "macro": evald["macro"]}
        )
        if task.index == 1:
            state.task1_test_reprs = model.encode_instances(stream.tasks[0].test)
            state.task1_test_labels = np.asarray([i.label for i in stream.tasks[0].test])
    return state


def build_report(state: ContinualRunState, stream: TaskStream, encoder_cfg: EncoderConfig, cfg: TrainConfig) -> dict:
    acc_micro = [log["micro"] for log in state.task_logs if log.get("stage") == "eval"]
    acc_macro = [log["macro"] for log in state.task_logs if log.get("stage") == "eval"]
    return {
        "accuracy_matrix": state.matrix.to_lists(),
        "acc_per_stage": acc_micro,
        "acc_per_stage_macro": acc_macro,
        "fr": forgetting_rate(state.matrix),
        "config": {"train": asdict(cfg), "encoder": asdict(encoder_cfg)},
        "seed": cfg.seed,
        "num_tasks": len(stream.tasks),
    }
