"""Corpus ingestion, class-incremental task streams, and the synthetic benchmark corpus.

Datasets arrive pre-tokenized as JSONL, one object per line:

    {"text": ["tok", ...], "label": "string", "spans": [["head_entity", 3, 5], ...]}

Token and label strings are mapped to dense ids by sorted-unique order so ids
never depend on file layout. Vocabulary ids 0-5 are reserved for the special
tokens [E11] [E12] [E21] [E22] [MASK] [PAD]; regular tokens start at 6.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, InputError

E11_ID, E12_ID, E21_ID, E22_ID, MASK_ID, PAD_ID = range(6)
NUM_SPECIAL = 6
SPECIAL_TOKENS = ("[E11]", "[E12]", "[E21]", "[E22]", "[MASK]", "[PAD]")
SPAN_KINDS = ("head_entity", "tail_entity", "trigger")

MIN_CLASS_SIZE = 4  # smaller classes break exemplar selection and the train/test split


@dataclass(frozen=True)
class Instance:
    """One labeled token sequence with optional marked spans.

    uid is the instance's position in its source corpus; -1 for ad-hoc instances.
    """

    tokens: tuple[int, ...]
    label: int
    spans: tuple[tuple[str, int, int], ...] = ()
    uid: int = -1

    def validate(self, vocab_size: int) -> None:
        if self.label < 0:
            raise DataError(f"negative label {self.label}")
        for t in self.tokens:
            if not 0 <= t < vocab_size:
                raise DataError(f"token id {t} outside [0, {vocab_size})")
        for kind, start, end in self.spans:
            if kind not in SPAN_KINDS:
                raise DataError(f"unknown span kind {kind!r}")
            if not 0 <= start < end <= len(self.tokens):
                raise DataError(
                    f"span ({kind}, {start}, {end}) invalid for length {len(self.tokens)}"
                )

    def span(self, kind: str) -> tuple[int, int] | None:
        for k, s, e in self.spans:
            if k == kind:
                return (s, e)
        return None


@dataclass
class TaskSpec:
    index: int  # 1-based position in the stream
    label_set: frozenset[int]
    train: list[Instance]
    test: list[Instance]


@dataclass
class TaskStream:
    tasks: list[TaskSpec]
    seed: int
    global_label_set: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        union: set[int] = set()
        for t in self.tasks:
            if union & t.label_set:
                raise DataError(f"task {t.index} overlaps earlier label sets")
            union |= t.label_set
        if not self.global_label_set:
            self.global_label_set = frozenset(union)
        elif self.global_label_set != frozenset(union):
            raise DataError("global_label_set differs from union of task label sets")


class Vocabulary:
    """Maps token strings to dense ids with the special tokens pinned at 0-5."""

    def __init__(self, regular_tokens):
        ordered = sorted(set(regular_tokens))
        self._id_of = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
        for i, tok in enumerate(ordered):
            if tok in self._id_of:
                raise DataError(f"token {tok!r} collides with a reserved special token")
            self._id_of[tok] = NUM_SPECIAL + i
        self._token_of = {i: t for t, i in self._id_of.items()}

    @property
    def size(self) -> int:
        return len(self._id_of)

    def id_of(self, token: str) -> int:
        return self._id_of[token]

    def token_of(self, idx: int) -> str:
        return self._token_of[idx]

    def to_json(self) -> dict:
        regular = [self._token_of[i] for i in range(NUM_SPECIAL, self.size)]
        return {"regular_tokens": regular}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["regular_tokens"])


def load_corpus(path, fmt: str = "jsonl") -> tuple[list[Instance], Vocabulary, list[str]]:
    """Read a JSONL corpus. Returns (instances, vocabulary, label names by id)."""
    if fmt != "jsonl":
        raise ConfigError(f"unsupported corpus format {fmt!r}")
    rows = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise DataError(f"{path}: line {lineno}: object needs 'text' and 'label'")
            tokens = obj["text"]
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise DataError(f"{path}: line {lineno}: 'text' must be a list of strings")
            spans = []
            for raw in obj.get("spans", []):
                if len(raw) != 3:
                    raise DataError(f"{path}: line {lineno}: span needs [kind, start, end]")
                spans.append((str(raw[0]), int(raw[1]), int(raw[2])))
            rows.append((lineno, tokens, str(obj["label"]), tuple(spans)))

    label_names = sorted({label for _, _, label, _ in rows})
    label_id = {name: i for i, name in enumerate(label_names)}
    vocab = Vocabulary(tok for _, tokens, _, _ in rows for tok in tokens if tok not in SPECIAL_TOKENS)

    instances = []
    for uid, (lineno, tokens, label, spans) in enumerate(rows):
        inst = Instance(
            tokens=tuple(vocab.id_of(t) for t in tokens),
            label=label_id[label],
            spans=spans,
            uid=uid,
        )
        try:
            inst.validate(vocab.size)
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
        instances.append(inst)

    counts = np.bincount([i.label for i in instances], minlength=len(label_names)) if instances else []
    for cid, count in enumerate(counts):
        if count < MIN_CLASS_SIZE:
            raise DataError(
                f"class {label_names[cid]!r} has {count} instances; minimum is {MIN_CLASS_SIZE}"
            )
    return instances, vocab, label_names


def write_corpus_jsonl(path, instances: list[Instance], vocab: Vocabulary, label_names: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            obj = {
                "text": [vocab.token_of(t) for t in inst.tokens],
                "label": label_names[inst.label],
            }
            if inst.spans:
                obj["spans"] = [[k, s, e] for k, s, e in inst.spans]
            fh.write(json.dumps(obj) + "\n")


def split_tasks(
    instances: list[Instance],
    num_tasks: int,
    classes_per_task: int,
    seed: int,
    train_ratio: float = 0.75,
) -> TaskStream:
    """Shuffle classes with a seeded RNG, cut into consecutive groups, route instances.

    Each class is split train/test per-class at train_ratio with its own seeded
    shuffle, so the stream is byte-identical under equal arguments.
    """
    classes = sorted({i.label for i in instances})
    needed = num_tasks * classes_per_task
    if needed > len(classes):
        raise ConfigError(
            f"need {needed} classes ({num_tasks} tasks x {classes_per_task}), corpus has {len(classes)}"
        )
    ss = np.random.SeedSequence(seed)
    shuffle_rng, split_rng = (np.random.default_rng(c) for c in ss.spawn(2))

    order = np.array(classes)
    shuffle_rng.shuffle(order)
    selected = order[:needed]

    by_class: dict[int, list[Instance]] = {c: [] for c in selected}
    for inst in instances:
        if inst.label in by_class:
            by_class[inst.label].append(inst)

    train_of: dict[int, list[Instance]] = {}
    test_of: dict[int, list[Instance]] = {}
    for c in sorted(by_class):  # fixed iteration order keeps the split seed-stable
        group = list(by_class[c])
        perm = split_rng.permutation(len(group))
        n_train = int(np.clip(round(train_ratio * len(group)), 1, len(group) - 1))
        if len(group) < 2:
            raise ConfigError(f"class {c} has {len(group)} instances; cannot split train/test")
        train_of[c] = [group[i] for i in perm[:n_train]]
        test_of[c] = [group[i] for i in perm[n_train:]]

    tasks = []
    for t in range(num_tasks):
        chunk = selected[t * classes_per_task : (t + 1) * classes_per_task]
        train = [i for c in chunk for i in train_of[c]]
        test = [i for c in chunk for i in test_of[c]]
        tasks.append(TaskSpec(index=t + 1, label_set=frozenset(int(c) for c in chunk), train=train, test=test))
    return TaskStream(tasks=tasks, seed=seed)


def stream_manifest(stream: TaskStream, label_names: list[str]) -> dict:
    return {
        "seed": stream.seed,
        "tasks": [
            {"index": t.index, "labels": sorted(label_names[c] for c in t.label_set)}
            for t in stream.tasks
        ],
    }


def make_synthetic_corpus(
    num_classes: int,
    per_class: int,
    seq_len: int,
    vocab_size: int,
    seed: int,
    signature_prob: float = 0.8,
    window: int = 4,
) -> tuple[list[Instance], Vocabulary, list[str]]:
    """Generate a linearly separable synthetic corpus.

    Each class owns one reserved signature token. Positions are covered by
    consecutive windows of `window` tokens; in each window one position carries
    the class signature with probability `signature_prob`, everything else is
    uniform noise over the non-signature vocabulary. Deterministic under seed.
    """
    if vocab_size < num_classes + 10:
        raise InputError(f"vocab_size must be >= num_classes + 10, got {vocab_size}")
    rng = np.random.default_rng(seed)
    n_regular = vocab_size - NUM_SPECIAL
    noise_ids = np.arange(NUM_SPECIAL + num_classes, vocab_size)

    instances: list[Instance] = []
    uid = 0
    for c in range(num_classes):
        sig = NUM_SPECIAL + c
        for _ in range(per_class):
            tokens = rng.choice(noise_ids, size=seq_len)
            for w_start in range(0, seq_len, window):
                w_end = min(w_start + window, seq_len)
                pos = int(rng.integers(w_start, w_end))
                if rng.random() < signature_prob:
                    tokens[pos] = sig
            instances.append(Instance(tokens=tuple(int(t) for t in tokens), label=c, uid=uid))
            uid += 1

    vocab = Vocabulary(f"tok{i:04d}" for i in range(n_regular))
    label_names = [f"class{c:03d}" for c in range(num_classes)]
    return instances, vocab, label_names
