"""Experiment driver: corpus/stream assembly, per-seed runs, report files,
aggregation, and the ablation grid."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import VARIANTS, ExperimentConfig
from .corpus import (
    Instance,
    TaskStream,
    Vocabulary,
    load_corpus,
    make_synthetic_corpus,
    split_tasks,
    stream_manifest,
)
from .diagnostics import eig_spectrum, estimate_task_mi
from .errors import ConfigError
from .model import SequenceClassifier
from .trainer import ContinualRunState, build_report, run_continual


def build_corpus(cfg: ExperimentConfig, dataset: str | None = None):
    """Returns (instances, vocab, label_names) from JSONL or the synthetic generator."""
    source = dataset if dataset is not None else cfg["dataset"]
    if source == "synthetic":
        return make_synthetic_corpus(
            num_classes=cfg["synth_classes"],
            per_class=cfg["synth_per_class"],
            seq_len=cfg["synth_seq_len"],
            vocab_size=cfg["synth_vocab"],
            seed=cfg["synth_seed"],
        )
    return load_corpus(source)


def build_stream(instances: list[Instance], cfg: ExperimentConfig, seed: int) -> TaskStream:
    return split_tasks(
        instances,
        num_tasks=cfg["num_tasks"],
        classes_per_task=cfg["classes_per_task"],
        seed=seed,
        train_ratio=cfg["train_ratio"],
    )


def run_single(
    cfg: ExperimentConfig,
    seed: int,
    variant: str = "full",
    dataset: str | None = None,
    corpus_cache: tuple | None = None,
) -> tuple[dict, ContinualRunState, TaskStream, list[str]]:
    """One continual run; returns (report, run state, stream, label names)."""
    instances, vocab, label_names = corpus_cache or build_corpus(cfg, dataset)
    stream = build_stream(instances, cfg, seed)
    encoder_cfg = cfg.encoder_config(vocab_size=vocab.size)
    train_cfg = cfg.train_config(seed=seed)
    state = run_continual(stream, encoder_cfg, train_cfg)
    report = build_report(state, stream, encoder_cfg, train_cfg)
    report["config"] = cfg.with_overrides(seed=seed).to_dict()
    report["config_hash"] = cfg.config_hash()
    report["variant"] = variant
    report["stream"] = stream_manifest(stream, label_names)
    return report, state, stream, label_names


def write_json(obj: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2))
        fh.write("\n")


def aggregate(reports: list[dict]) -> dict:
    """Mean/stdev (population) of per-stage accuracy and FR across seed runs.

    Refuses to mix reports whose config hash or variant differ.
    """
    if not reports:
        raise ConfigError("nothing to aggregate")
    hashes = {r["config_hash"] for r in reports}
    variants = {r.get("variant", "full") for r in reports}
    if len(hashes) > 1:
        raise ConfigError(f"refusing to aggregate mixed config hashes: {sorted(hashes)}")
    if len(variants) > 1:
        raise ConfigError(f"refusing to aggregate mixed variants: {sorted(variants)}")
    acc = np.asarray([r["acc_per_stage"] for r in reports], dtype=np.float64)
    frs = [r["fr"] for r in reports if r["fr"] is not None]
    return {
        "config_hash": hashes.pop(),
        "variant": variants.pop(),
        "num_runs": len(reports),
        "seeds": [r["seed"] for r in reports],
        "acc_per_stage_mean": acc.mean(axis=0).tolist(),
        "acc_per_stage_std": acc.std(axis=0).tolist(),
        "final_acc_mean": float(acc[:, -1].mean()),
        "final_acc_std": float(acc[:, -1].std()),
        "fr_values": [r["fr"] for r in reports],
        "fr_mean": float(np.mean(frs)) if frs else None,
    }


def run_experiment(
    cfg: ExperimentConfig,
    output: Path,
    seeds: list[int],
    variant: str = "full",
    dataset: str | None = None,
    save_checkpoints: bool = True,
) -> dict:
    output = Path(output)
    corpus_cache = build_corpus(cfg, dataset)
    reports = []
    for seed in seeds:
        report, state, stream, label_names = run_single(
            cfg, seed, variant=variant, dataset=dataset, corpus_cache=corpus_cache
        )
        write_json(report, output / f"report-{variant}-seed{seed}.json")
        state.matrix.write_csv(output / f"accuracy-matrix-{variant}-seed{seed}.csv")
        if save_checkpoints:
            state.model.save(output / f"model-{variant}-seed{seed}.npz")
        reports.append(report)
    summary = aggregate(reports)
    write_json(summary, output / f"aggregate-{variant}.json")
    return summary


def run_ablation(
    cfg: ExperimentConfig,
    output: Path,
    seeds: list[int],
    variants: tuple[str, ...] = VARIANTS,
    dataset: str | None = None,
) -> dict:
    """The ablation grid; every variant sees the same task streams (same seeds)."""
    output = Path(output)
    per_variant: dict[str, list[dict]] = {}
    for name in variants:
        vcfg = cfg.variant(name)
        corpus_cache = build_corpus(vcfg, dataset)
        reports = []
        for seed in seeds:
            report, state, _, _ = run_single(
                vcfg, seed, variant=name, dataset=dataset, corpus_cache=corpus_cache
            )
            write_json(report, output / f"report-{name}-seed{seed}.json")
            reports.append(report)
        per_variant[name] = reports
        write_json(aggregate(reports), output / f"aggregate-{name}.json")

    summary: dict = {"variants": {n: aggregate(r) for n, r in per_variant.items()}}
    if "full" in per_variant:
        full_final = {r["seed"]: r["acc_per_stage"][-1] for r in per_variant["full"]}
        deltas = {}
        for name, reports in per_variant.items():
            if name == "full":
                continue
            per_seed = [full_final[r["seed"]] - r["acc_per_stage"][-1] for r in reports]
            deltas[name] = {
                "per_seed": per_seed,
                "mean": float(np.mean(per_seed)),
                "std": float(np.std(per_seed)),
            }
        summary["paired_deltas_full_minus_variant"] = deltas
    write_json(summary, output / "ablation_summary.json")
    return summary


def run_diagnose(
    checkpoint: Path,
    cfg: ExperimentConfig,
    output: Path,
    seed: int,
    task_index: int = 1,
    modes: tuple[str, ...] = ("x_z", "z_zplus", "z_y"),
    epochs: int = 120,
    dataset: str | None = None,
    top_k: int = 100,
) -> dict:
    """MI estimates and the eigen-spectrum for one task's test set."""
    model = SequenceClassifier.load(checkpoint)
    instances, _, _ = build_corpus(cfg, dataset)
    stream = build_stream(instances, cfg, seed)
    if not 1 <= task_index <= len(stream.tasks):
        raise ConfigError(f"task index {task_index} outside stream of {len(stream.tasks)} tasks")
    test = stream.tasks[task_index - 1].test

    output = Path(output)
    results = {}
    for i, mode in enumerate(modes):
        rng = np.random.default_rng([seed, task_index, i])
        res = estimate_task_mi(model, test, mode, epochs=epochs, rng=rng)
        report = res.to_report(mode)
        report["task_index"] = task_index
        write_json(report, output / f"diagnostics-{mode}-task{task_index}.json")
        results[mode] = report

    reps = model.encode_instances(test)
    spectrum = eig_spectrum(reps, top_k=top_k)
    output.mkdir(parents=True, exist_ok=True)
    spectrum.write_csv(output / f"spectrum-task{task_index}.csv")
    results["spectrum_top_eigenvalues"] = spectrum.eigenvalues[:10]
    return results


def run_evaluate(
    checkpoint: Path,
    cfg: ExperimentConfig,
    seed: int,
    dataset: str | None = None,
) -> dict:
    """Accuracy of a checkpoint over all test instances of classes it has seen."""
    model = SequenceClassifier.load(checkpoint)
    instances, _, label_names = build_corpus(cfg, dataset)
    stream = build_stream(instances, cfg, seed)
    seen = set(model.seen_classes)
    test = [inst for task in stream.tasks for inst in task.test if inst.label in seen]
    if not test:
        raise ConfigError("checkpoint has seen none of the dataset's classes")
    preds = model.predict(test)
    labels = np.asarray([inst.label for inst in test])
    return {
        "num_instances": len(test),
        "accuracy_micro": float((preds == labels).mean()),
        "seen_classes": sorted(label_names[c] for c in seen),
    }
