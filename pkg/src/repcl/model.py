"""The classification model: trainable sequence encoder, growing classifier
head, projection head for contrastive features, and the masked-token decoding
head.

The encoder is a small pre-LN transformer with learned positional embeddings,
trained from scratch. Task pooling modes:

  span_concat   -- concat of hidden states at the head/tail entity span starts
  span_mean     -- average of hidden states over the trigger span
  sentence_mean -- average of hidden states over all non-pad positions
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Instance, PAD_ID
from .errors import CheckpointError, ConfigError, InputError, StructuralError

POOLINGS = ("span_concat", "span_mean", "sentence_mean")


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 128
    max_seq_len: int = 128
    pooling: str = "sentence_mean"
    proj_hidden: int = 64
    proj_dim: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError("embed_dim must be divisible by num_heads")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")
        if self.vocab_size < 7:
            raise ConfigError("vocab_size must cover the 6 special tokens plus content")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def repr_dim(self) -> int:
        return 2 * self.embed_dim if self.pooling == "span_concat" else self.embed_dim


@dataclass
class Batch:
    """Padded instance batch plus the position info each pooling mode needs."""

    ids: np.ndarray  # (B, L) int64, PAD_ID-padded
    lengths: np.ndarray  # (B,)
    labels: np.ndarray  # (B,) global class ids
    head_pos: np.ndarray | None = None  # (B,) span_concat
    tail_pos: np.ndarray | None = None
    trig_start: np.ndarray | None = None  # (B,) span_mean
    trig_end: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def make_batch(instances: list[Instance], config: EncoderConfig) -> Batch:
    if not instances:
        raise InputError("cannot build an empty batch")
    lengths = []
    for inst in instances:
        n = len(inst.tokens)
        if n > config.max_seq_len:
            warnings.warn(
                f"sequence of length {n} truncated to max_seq_len={config.max_seq_len}",
                stacklevel=2,
            )
            n = config.max_seq_len
        if n == 0:
            raise InputError("cannot encode an empty token sequence")
        lengths.append(n)
    max_len = max(lengths)
    ids = np.full((len(instances), max_len), PAD_ID, dtype=np.int64)
    for i, inst in enumerate(instances):
        ids[i, : lengths[i]] = inst.tokens[: lengths[i]]
    batch = Batch(
        ids=ids,
        lengths=np.asarray(lengths, dtype=np.int64),
        labels=np.asarray([inst.label for inst in instances], dtype=np.int64),
    )

    if config.pooling == "span_concat":
        head, tail = [], []
        for i, inst in enumerate(instances):
            hs = inst.span("head_entity")
            ts = inst.span("tail_entity")
            if hs is None or ts is None:
                raise InputError("span_concat pooling needs head_entity and tail_entity spans")
            if hs[0] >= lengths[i] or ts[0] >= lengths[i]:
                raise InputError("entity span start lies beyond the truncated sequence")
            head.append(hs[0])
            tail.append(ts[0])
        batch.head_pos = np.asarray(head, dtype=np.int64)
        batch.tail_pos = np.asarray(tail, dtype=np.int64)
    elif config.pooling == "span_mean":
        ts_, te_ = [], []
        for i, inst in enumerate(instances):
            tr = inst.span("trigger")
            if tr is None:
                raise InputError("span_mean pooling needs a trigger span")
            if tr[1] > lengths[i]:
                raise InputError("trigger span lies beyond the truncated sequence")
            ts_.append(tr[0])
            te_.append(tr[1])
        batch.trig_start = np.asarray(ts_, dtype=np.int64)
        batch.trig_end = np.asarray(te_, dtype=np.int64)
    return batch


class SequenceClassifier:
    """Encoder + heads with a flat named-parameter registry.

    Parameter names are grouped by prefix: the encoder (embeddings, blocks,
    final layer norm), the projection head ("proj."), the classifier ("cls."),
    and the masked-token decoder ("xmlm."). The momentum branch copies the
    encoder and projection subsets.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.seen_classes: list[int] = []
        c = config

        def par(name, shape, std=0.02):
            self.params[name] = ag.parameter(shape, rng=rng, std=std)

        def const(name, value):
            self.params[name] = Tensor(value, requires_grad=True)

        par("tok_emb", (c.vocab_size, c.embed_dim))
        par("pos_emb", (c.max_seq_len, c.embed_dim))
        for i in range(c.num_layers):
            p = f"blk{i}."
            const(p + "ln1.g", np.ones(c.embed_dim))
            const(p + "ln1.b", np.zeros(c.embed_dim))
            for nm in ("wq", "wk", "wv", "wo"):
                par(p + "attn." + nm, (c.embed_dim, c.embed_dim))
            for nm in ("bq", "bk", "bv", "bo"):
                const(p + "attn." + nm, np.zeros(c.embed_dim))
            const(p + "ln2.g", np.ones(c.embed_dim))
            const(p + "ln2.b", np.zeros(c.embed_dim))
            par(p + "ffn.w1", (c.embed_dim, c.hidden_dim))
            const(p + "ffn.b1", np.zeros(c.hidden_dim))
            par(p + "ffn.w2", (c.hidden_dim, c.embed_dim))
            const(p + "ffn.b2", np.zeros(c.embed_dim))
        const("lnf.g", np.ones(c.embed_dim))
        const("lnf.b", np.zeros(c.embed_dim))

        par("proj.w1", (c.repr_dim, c.proj_hidden))
        const("proj.b1", np.zeros(c.proj_hidden))
        par("proj.w2", (c.proj_hidden, c.proj_dim))
        const("proj.b2", np.zeros(c.proj_dim))

        const("cls.w", np.zeros((0, c.repr_dim)))
        const("cls.b", np.zeros(0))

        par("xmlm.w1", (c.repr_dim + c.embed_dim, c.hidden_dim))
        const("xmlm.b1", np.zeros(c.hidden_dim))
        par("xmlm.w2", (c.hidden_dim, c.vocab_size))
        const("xmlm.b2", np.zeros(c.vocab_size))

        # pre-training snapshot of the token embeddings; fixed input proxy
        # for the input-vs-representation MI diagnostics
        self.frozen_token_embedding = self.params["tok_emb"].data.copy()

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def encoder_param_names(self) -> list[str]:
        return [
            n
            for n in self.params
            if n in ("tok_emb", "pos_emb") or n.startswith("blk") or n.startswith("lnf")
        ]

    def momentum_param_names(self) -> list[str]:
        return self.encoder_param_names() + [n for n in self.params if n.startswith("proj.")]

    def head_param_names(self) -> list[str]:
        return [
            n
            for n in self.params
            if n.startswith("proj.") or n.startswith("cls.") or n.startswith("xmlm.")
        ]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def clone(self) -> "SequenceClassifier":
        dup = object.__new__(SequenceClassifier)
        dup.config = self.config
        dup.params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        dup.seen_classes = list(self.seen_classes)
        dup.frozen_token_embedding = self.frozen_token_embedding.copy()
        return dup

    def expand_head(self, new_classes, rng: np.random.Generator) -> None:
        """Append one classifier row per new class; existing rows are untouched."""
        fresh = [c for c in sorted(new_classes) if c not in self.seen_classes]
        if not fresh:
            return
        w = self.params["cls.w"].data
        b = self.params["cls.b"].data
        new_w = rng.normal(0.0, 0.02, size=(len(fresh), self.config.repr_dim))
        self.params["cls.w"] = Tensor(np.vstack([w, new_w]), requires_grad=True)
        self.params["cls.b"] = Tensor(np.concatenate([b, np.zeros(len(fresh))]), requires_grad=True)
        self.seen_classes.extend(fresh)

    def class_row(self, label: int) -> int:
        try:
            return self.seen_classes.index(label)
        except ValueError:
            raise StructuralError(f"class {label} queried before the head was expanded for it")

    # ------------------------------------------------------------------
    # forward passes (tape-recorded unless inside autograd.no_grad())

    def embed_ids(self, ids: np.ndarray) -> Tensor:
        L = ids.shape[1]
        if L > self.config.max_seq_len:
            raise InputError(f"batch length {L} exceeds max_seq_len {self.config.max_seq_len}")
        tok = ag.embedding(self.params["tok_emb"], ids)
        pos = ag.gather_rows(self.params["pos_emb"], np.arange(L))
        return ag.add(tok, pos)

    def _attention(self, x: Tensor, mask_add: np.ndarray, prefix: str) -> Tensor:
        c = self.config
        B, L, _ = x.shape
        h, dh = c.num_heads, c.embed_dim // c.num_heads

        def heads(name):
            t = ag.add(ag.matmul(x, self.params[prefix + "w" + name]), self.params[prefix + "b" + name])
            return ag.transpose(ag.reshape(t, (B, L, h, dh)), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = ag.scale(ag.matmul(q, ag.swap_last_axes(k)), 1.0 / np.sqrt(dh))
        attn = ag.softmax(scores, additive_mask=mask_add)
        mixed = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (B, L, c.embed_dim))
        return ag.add(ag.matmul(mixed, self.params[prefix + "wo"]), self.params[prefix + "bo"])

    def hidden_from_embedded(
        self,
        emb: Tensor,
        lengths: np.ndarray,
        drop_rng: np.random.Generator | None = None,
    ) -> Tensor:
        c = self.config
        B, L, _ = emb.shape
        valid = np.arange(L)[None, :] < lengths[:, None]
        mask_add = np.where(valid, 0.0, -1e9).reshape(B, 1, 1, L)

        x = emb
        if drop_rng is not None and c.dropout > 0:
            x = ag.dropout(x, c.dropout, drop_rng)
        for i in range(c.num_layers):
            p = f"blk{i}."
            a = self._attention(
                ag.layer_norm(x, self.params[p + "ln1.g"], self.params[p + "ln1.b"]),
                mask_add,
                p + "attn.",
            )
            if drop_rng is not None and c.dropout > 0:
                a = ag.dropout(a, c.dropout, drop_rng)
            x = ag.add(x, a)
            f = ag.layer_norm(x, self.params[p + "ln2.g"], self.params[p + "ln2.b"])
            f = ag.add(ag.matmul(f, self.params[p + "ffn.w1"]), self.params[p + "ffn.b1"])
            f = ag.gelu(f)
            f = ag.add(ag.matmul(f, self.params[p + "ffn.w2"]), self.params[p + "ffn.b2"])
            if drop_rng is not None and c.dropout > 0:
                f = ag.dropout(f, c.dropout, drop_rng)
            x = ag.add(x, f)
        return ag.layer_norm(x, self.params["lnf.g"], self.params["lnf.b"])

    def hidden_states(
        self, ids: np.ndarray, lengths: np.ndarray, drop_rng=None
    ) -> Tensor:
        return self.hidden_from_embedded(self.embed_ids(ids), lengths, drop_rng)

    def pool_hidden(self, hidden: Tensor, batch: Batch) -> Tensor:
        c = self.config
        B, L, d = hidden.shape
        if c.pooling == "sentence_mean":
            valid = (np.arange(L)[None, :] < batch.lengths[:, None]).astype(np.float64)
            weights = valid / batch.lengths[:, None]
            return ag.sum_axis(ag.mul_const(hidden, weights[:, :, None]), axis=1)
        if c.pooling == "span_mean":
            pos = np.arange(L)[None, :]
            inside = (pos >= batch.trig_start[:, None]) & (pos < batch.trig_end[:, None])
            widths = (batch.trig_end - batch.trig_start).astype(np.float64)
            weights = inside.astype(np.float64) / widths[:, None]
            return ag.sum_axis(ag.mul_const(hidden, weights[:, :, None]), axis=1)
        flat = ag.reshape(hidden, (B * L, d))
        rows = np.arange(B, dtype=np.int64) * L
        head = ag.gather_rows(flat, rows + batch.head_pos)
        tail = ag.gather_rows(flat, rows + batch.tail_pos)
        return ag.concat_last([head, tail])

    def representations(self, batch: Batch, drop_rng=None) -> Tensor:
        return self.pool_hidden(self.hidden_states(batch.ids, batch.lengths, drop_rng), batch)

    def classify(self, z: Tensor) -> Tensor:
        if len(self.seen_classes) == 0:
            raise StructuralError("classifier head is empty; expand_head was never called")
        return ag.add(ag.matmul(z, ag.swap_last_axes(self.params["cls.w"])), self.params["cls.b"])

    def project(self, z: Tensor) -> Tensor:
        h = ag.relu(ag.add(ag.matmul(z, self.params["proj.w1"]), self.params["proj.b1"]))
        out = ag.add(ag.matmul(h, self.params["proj.w2"]), self.params["proj.b2"])
        return ag.normalize_rows(out)

    def xmlm_logits(
        self,
        z_anchor: Tensor,
        hidden_masked: Tensor,
        pos_batch: np.ndarray,
        pos_time: np.ndarray,
    ) -> Tensor:
        """Vocabulary logits for each masked position.

        Each masked position's final hidden state is concatenated with the
        anchor representation of its partner instance, then decoded by a
        two-layer head.
        """
        if pos_batch.size == 0:
            raise InputError("masked batch contains no masked positions")
        B, L, d = hidden_masked.shape
        flat = ag.reshape(hidden_masked, (B * L, d))
        h_mask = ag.gather_rows(flat, pos_batch * L + pos_time)
        z_rows = ag.gather_rows(z_anchor, pos_batch)
        x = ag.concat_last([z_rows, h_mask])
        h = ag.gelu(ag.add(ag.matmul(x, self.params["xmlm.w1"]), self.params["xmlm.b1"]))
        return ag.add(ag.matmul(h, self.params["xmlm.w2"]), self.params["xmlm.b2"])

    # ------------------------------------------------------------------
    # inference conveniences

    def encode_instances(self, instances: list[Instance], chunk: int = 128) -> np.ndarray:
        """Representations for a list of instances, no tape."""
        out = []
        with ag.no_grad():
            for i in range(0, len(instances), chunk):
                batch = make_batch(instances[i : i + chunk], self.config)
                out.append(self.representations(batch).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.repr_dim))

    def predict(self, instances: list[Instance], chunk: int = 128) -> np.ndarray:
        """Predicted global class ids; logit ties break to the lowest class id."""
        preds = []
        seen = np.asarray(self.seen_classes, dtype=np.int64)
        with ag.no_grad():
            for i in range(0, len(instances), chunk):
                batch = make_batch(instances[i : i + chunk], self.config)
                logits = self.classify(self.representations(batch)).data
                best = logits.max(axis=1, keepdims=True)
                for row, b in zip(logits, best):
                    preds.append(int(seen[row >= b].min()))
        return np.asarray(preds, dtype=np.int64)

    # ------------------------------------------------------------------
    # checkpointing

    def save(self, path) -> None:
        arrays = {f"param:{k}": v.data for k, v in self.params.items()}
        arrays["frozen_token_embedding"] = self.frozen_token_embedding
        arrays["seen_classes"] = np.asarray(self.seen_classes, dtype=np.int64)
        arrays["config_json"] = np.frombuffer(
            json.dumps(asdict(self.config)).encode("utf-8"), dtype=np.uint8
        )
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path, expect_config: EncoderConfig | None = None) -> "SequenceClassifier":
        with np.load(path) as arc:
            try:
                cfg_dict = json.loads(bytes(arc["config_json"]).decode("utf-8"))
                config = EncoderConfig(**cfg_dict)
            except (KeyError, TypeError, ValueError) as exc:
                raise CheckpointError(f"unreadable checkpoint config: {exc}") from exc
            if expect_config is not None and config != expect_config:
                raise CheckpointError(
                    f"checkpoint config {config} does not match expected {expect_config}"
                )
            model = cls(config, np.random.default_rng(0))
            stored = {k[len("param:") :]: arc[k] for k in arc.files if k.startswith("param:")}
            expected = set(model.params) - {"cls.w", "cls.b"}
            if set(stored) != expected | {"cls.w", "cls.b"}:
                missing = (expected | {"cls.w", "cls.b"}) ^ set(stored)
                raise CheckpointError(f"checkpoint parameter names mismatch: {sorted(missing)}")
            for name, arr in stored.items():
                if name not in ("cls.w", "cls.b") and arr.shape != model.params[name].data.shape:
                    raise CheckpointError(
                        f"parameter {name} has shape {arr.shape}, expected {model.params[name].data.shape}"
                    )
                model.params[name] = Tensor(np.array(arr), requires_grad=True)
            model.seen_classes = [int(c) for c in arc["seen_classes"]]
            if model.params["cls.w"].data.shape != (len(model.seen_classes), config.repr_dim):
                raise CheckpointError("classifier head shape inconsistent with seen classes")
            model.frozen_token_embedding = np.array(arc["frozen_token_embedding"])
        return model
