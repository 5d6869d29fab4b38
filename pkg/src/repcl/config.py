"""Experiment configuration: flat key=value files with a typed schema.

Every tunable lives here. Unknown keys are rejected, values are coerced to
their schema type, and the assembled config is validated by constructing the
component configs (which enforce their own invariants). The config hash
excludes the seed so reports from different seeds of one experiment can be
aggregated together.
"""

from __future__ import annotations

import hashlib
import json

from .errors import ConfigError
from .model import EncoderConfig
from .replay import AdversarialConfig
from .trainer import TrainConfig

# name -> (type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    # data
    "dataset": (str, "synthetic"),
    "num_tasks": (int, 10),
    "classes_per_task": (int, 2),
    "train_ratio": (float, 0.75),
    "synth_classes": (int, 20),
    "synth_per_class": (int, 80),
    "synth_seq_len": (int, 16),
    "synth_vocab": (int, 64),
    "synth_seed": (int, 1234),
    # encoder
    "embed_dim": (int, 64),
    "num_layers": (int, 2),
    "num_heads": (int, 4),
    "hidden_dim": (int, 128),
    "max_seq_len": (int, 128),
    "pooling": (str, "sentence_mean"),
    "proj_hidden": (int, 64),
    "proj_dim": (int, 64),
    "dropout": (float, 0.0),
    # training
    "lambda_con": (float, 0.05),
    "lambda_xmlm": (float, 0.1),
    "epochs_initial": (int, 10),
    "epochs_replay": (int, 10),
    "batch_size": (int, 16),
    "lr_encoder": (float, 1e-4),
    "lr_heads": (float, 1e-3),
    "temperature": (float, 0.1),
    "ema_decay": (float, 0.99),
    "queue_size": (int, 512),
    "mask_prob": (float, 0.3),
    "memory_budget": (int, 10),
    # adversarial replay
    "adv_steps": (int, 2),
    "adv_step_size": (float, 0.1),
    "adv_epsilon": (float, 0.2),
    "adv_init": (str, "zero"),
    # ablation flags
    "no_con": (bool, False),
    "no_xmlm": (bool, False),
    "no_adv": (bool, False),
    "mlm_instead_of_xmlm": (bool, False),
    "no_replay": (bool, False),
    "infomax_variant": (bool, False),
    # seeding
    "seed": (int, 0),
}

VARIANTS = ("full", "no_con", "no_xmlm", "no_adv", "with_mlm", "no_replay", "infomax")

# the sequential fine-tuning baseline and the plain two-stage replay backbone
BASELINE_VARIANTS = ("ce_only", "backbone")


def _coerce(key: str, raw: str):
    typ, _ = SCHEMA[key]
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from exc


class ExperimentConfig:
    """Validated bag of all tunables; immutable by convention."""

    def __init__(self, values: dict | None = None):
        merged = {k: default for k, (_, default) in SCHEMA.items()}
        for key, val in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            typ, _ = SCHEMA[key]
            if typ is float and isinstance(val, int):
                val = float(val)
            if not isinstance(val, typ):
                raise ConfigError(f"{key}: expected {typ.__name__}, got {type(val).__name__}")
            merged[key] = val
        self.values = merged
        self.validate()

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
        return cls(values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def __getitem__(self, key: str):
        return self.values[key]

    def to_dict(self) -> dict:
        return dict(self.values)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(overrides)
        return ExperimentConfig(vals)

    def config_hash(self) -> str:
        hashed = {k: v for k, v in self.values.items() if k != "seed"}
        blob = json.dumps(hashed, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    # ------------------------------------------------------------------

    def validate(self) -> None:
        v = self.values
        if v["num_tasks"] < 1 or v["classes_per_task"] < 1:
            raise ConfigError("num_tasks and classes_per_task must be >= 1")
        if not 0.0 < v["train_ratio"] < 1.0:
            raise ConfigError("train_ratio must be in (0, 1)")
        # constructing the component configs runs their invariant checks
        self.encoder_config(vocab_size=max(v["synth_vocab"], 7))
        self.train_config()

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        v = self.values
        dropout = v["dropout"]
        if v["infomax_variant"] and dropout <= 0:
            dropout = 0.1  # stochastic views need dropout noise
        return EncoderConfig(
            vocab_size=vocab_size,
            embed_dim=v["embed_dim"],
            num_layers=v["num_layers"],
            num_heads=v["num_heads"],
            hidden_dim=v["hidden_dim"],
            max_seq_len=v["max_seq_len"],
            pooling=v["pooling"],
            proj_hidden=v["proj_hidden"],
            proj_dim=v["proj_dim"],
            dropout=dropout,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            lambda_con=0.0 if v["no_con"] else v["lambda_con"],
            lambda_xmlm=0.0 if v["no_xmlm"] else v["lambda_xmlm"],
            epochs_initial=v["epochs_initial"],
            epochs_replay=v["epochs_replay"],
            batch_size=v["batch_size"],
            lr_encoder=v["lr_encoder"],
            lr_heads=v["lr_heads"],
            temperature=v["temperature"],
            ema_decay=v["ema_decay"],
            queue_size=v["queue_size"],
            mask_prob=v["mask_prob"],
            memory_budget=v["memory_budget"],
            adv=AdversarialConfig(
                steps=v["adv_steps"],
                step_size=v["adv_step_size"],
                epsilon=v["adv_epsilon"],
                init=v["adv_init"],
            ),
            seed=v["seed"] if seed is None else seed,
            use_replay=not v["no_replay"],
            use_adversarial=not v["no_adv"],
            mlm_instead_of_xmlm=v["mlm_instead_of_xmlm"],
            infomax_variant=v["infomax_variant"],
        )

    def variant(self, name: str) -> "ExperimentConfig":
        """Derive the named ablation/baseline variant of this experiment."""
        if name == "full":
            return self.with_overrides(
                no_con=False, no_xmlm=False, no_adv=False,
                mlm_instead_of_xmlm=False, no_replay=False, infomax_variant=False,
            )
        if name == "no_con":
            return self.variant("full").with_overrides(no_con=True)
        if name == "no_xmlm":
            return self.variant("full").with_overrides(no_xmlm=True)
        if name == "no_adv":
            return self.variant("full").with_overrides(no_adv=True)
        if name == "with_mlm":
            return self.variant("full").with_overrides(mlm_instead_of_xmlm=True)
        if name == "no_replay":
            return self.variant("full").with_overrides(no_replay=True)
        if name == "infomax":
            # the trainer drops the contrastive and cross-MLM terms itself when
            # infomax_variant is set; lambda_con weights the InfoNCE term
            return self.variant("full").with_overrides(infomax_variant=True)
        if name == "ce_only":
            return self.variant("full").with_overrides(
                no_con=True, no_xmlm=True, no_replay=True
            )
        if name == "backbone":
            return self.variant("full").with_overrides(
                no_con=True, no_xmlm=True, no_adv=True
            )
        raise ConfigError(f"unknown variant {name!r}")


def schema_dump() -> str:
    lines = ["# key = default        (type)"]
    for key, (typ, default) in SCHEMA.items():
        lines.append(f"{key} = {default}        # {typ.__name__}")
    return "\n".join(lines)
