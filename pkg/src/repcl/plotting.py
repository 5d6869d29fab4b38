"""Static result plots: per-stage accuracy curves, forgetting-rate bars,
eigenvalue spectra, and MINE fitting curves."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_run_accuracy(report: dict, path: Path) -> None:
    stages = range(1, len(report["acc_per_stage"]) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(stages, report["acc_per_stage"], marker="o")
    ax.set_xlabel("tasks learned")
    ax.set_ylabel("accuracy on all seen classes")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"{report.get('variant', 'run')} seed {report.get('seed')}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fr_bars(reports: list[dict], path: Path) -> None:
    labels = [f"{r.get('variant', 'run')}-s{r.get('seed')}" for r in reports]
    values = [r["fr"] if r["fr"] is not None else 0.0 for r in reports]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(labels) + 2), 4))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("forgetting rate")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mine_curve(diag: dict, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(diag["curve"])
    ax.axhline(diag["estimate_nats"], color="tab:red", linestyle="--", label="smoothed estimate")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MI lower bound (nats)")
    ax.set_title(diag.get("mode", "mi"))
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_spectrum_csv(csv_path: Path, out_path: Path) -> None:
    ranks, values = [], []
    with open(csv_path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ranks.append(int(row["rank"]))
            values.append(float(row["eigenvalue"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ranks, values, marker=".")
    ax.set_xlabel("rank")
    ax.set_ylabel("eigenvalue")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_report_dir(reports_dir: Path, output_dir: Path) -> list[Path]:
    """Render every known artifact in reports_dir; returns written image paths."""
    import json

    reports_dir = Path(reports_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []

    run_reports = []
    for p in sorted(reports_dir.glob("report-*.json")):
        with open(p, "r", encoding="utf-8") as fh:
            report = json.load(fh)
        run_reports.append(report)
        out = output_dir / f"acc-{p.stem}.png"
        plot_run_accuracy(report, out)
        written.append(out)
    if run_reports:
        out = output_dir / "fr-bars.png"
        plot_fr_bars(run_reports, out)
        written.append(out)

    for p in sorted(reports_dir.glob("diagnostics-*.json")):
        with open(p, "r", encoding="utf-8") as fh:
            diag = json.load(fh)
        out = output_dir / f"mine-{p.stem}.png"
        plot_mine_curve(diag, out)
        written.append(out)

    for p in sorted(reports_dir.glob("spectrum-*.csv")):
        out = output_dir / f"{p.stem}.png"
        plot_spectrum_csv(p, out)
        written.append(out)
    return written
