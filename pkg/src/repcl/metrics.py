"""Average accuracy over seen tasks and the forgetting rate.

The accuracy matrix is lower-triangular: row j holds the accuracy on each
task i <= j measured after training task j. Forgetting for task i at stage k
is the best accuracy any earlier stage achieved on i minus the stage-k
accuracy; FR_k averages this over i < k and is deliberately unclamped, so
backward transfer shows up as a negative contribution.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import InputError


class AccuracyMatrix:
    """Ragged lower-triangular store: a[j][i], 1-based task indices."""

    def __init__(self):
        self.rows: list[list[float]] = []

    def add_row(self, accuracies) -> None:
        row = [float(a) for a in accuracies]
        if len(row) != len(self.rows) + 1:
            raise InputError(
                f"row {len(self.rows) + 1} must have {len(self.rows) + 1} entries, got {len(row)}"
            )
        if any(not 0.0 <= a <= 1.0 for a in row):
            raise InputError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    def __getitem__(self, ji: tuple[int, int]) -> float:
        j, i = ji
        return self.rows[j - 1][i - 1]

    @property
    def num_stages(self) -> int:
        return len(self.rows)

    def to_lists(self) -> list[list[float]]:
        return [list(r) for r in self.rows]

    @classmethod
    def from_lists(cls, rows) -> "AccuracyMatrix":
        m = cls()
        for r in rows:
            m.add_row(r)
        return m

    def write_csv(self, path) -> None:
        """Header = task ids; one row per training stage; blanks above the diagonal."""
        k = self.num_stages
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage"] + [f"task_{i}" for i in range(1, k + 1)])
            for j, row in enumerate(self.rows, start=1):
                writer.writerow([j] + [f"{a:.6f}" for a in row] + [""] * (k - j))


def accuracy_scores(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InputError("predictions/labels shape mismatch")
    return float((predictions == labels).mean()) if labels.size else 0.0


def accuracy_all_seen(model, stream, upto_task: int, macro: bool = False) -> float:
    """Accuracy over the pooled test sets of tasks 1..upto_task.

    Micro-averages by default (every test instance counts once); macro averages
    the per-task accuracies instead.
    """
    per_task = []
    correct = 0
    total = 0
    for task in stream.tasks[:upto_task]:
        preds = model.predict(task.test)
        labels = np.asarray([inst.label for inst in task.test])
        hits = int((preds == labels).sum())
        correct += hits
        total += labels.size
        per_task.append(hits / labels.size if labels.size else 0.0)
    if macro:
        return float(np.mean(per_task)) if per_task else 0.0
    return correct / total if total else 0.0


def forgetting_rate(matrix: AccuracyMatrix, k: int | None = None) -> float | None:
    """FR_k = mean over i<k of (max accuracy on task i before stage k) - a[k][i].

    Returns None when fewer than two stages exist (forgetting is undefined).
    """
    if k is None:
        k = matrix.num_stages
    if k < 2:
        return None
    if k > matrix.num_stages:
        raise InputError(f"matrix has {matrix.num_stages} rows, cannot compute FR_{k}")
    terms = []
    for i in range(1, k):
        best = max(matrix[(l, i)] for l in range(i, k))  # rows l >= i hold entry i
        terms.append(best - matrix[(k, i)])
    return float(np.mean(terms))
