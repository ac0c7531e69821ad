"""Confusion-matrix accumulation and macro-averaged classification metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError, LabelingError, ShapeError


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    support: list[int]

    def to_dict(self, classes=None) -> dict:
        fix4 = lambda x: float(f"{x:.4f}")
        doc = {
            "accuracy": fix4(self.accuracy),
            "macro_precision": fix4(self.macro_precision),
            "macro_recall": fix4(self.macro_recall),
            "macro_f1": fix4(self.macro_f1),
            "per_class_precision": [fix4(v) for v in self.per_class_precision],
            "per_class_recall": [fix4(v) for v in self.per_class_recall],
            "per_class_f1": [fix4(v) for v in self.per_class_f1],
            "support": list(self.support),
        }
        if classes is not None:
            doc["classes"] = list(classes)
        return doc

    def save(self, path, classes=None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(classes), indent=1) + "\n")


class ConfusionMatrix:
    """C x C integer counts; rows are true classes, columns predictions."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ShapeError(f"need at least one class, got {num_classes}")
        self.num_classes = num_classes
        self.m = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, true_labels, predicted_labels) -> None:
        t = np.asarray(true_labels, dtype=np.int64)
        p = np.asarray(predicted_labels, dtype=np.int64)
        if t.shape != p.shape or t.ndim != 1:
            raise ShapeError(
                f"label arrays must be equal-length 1-D, got {t.shape} and {p.shape}"
            )
        if t.size and (
            t.min() < 0 or t.max() >= self.num_classes
            or p.min() < 0 or p.max() >= self.num_classes
        ):
            raise LabelingError(f"labels must lie in [0, {self.num_classes})")
        np.add.at(self.m, (t, p), 1)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        self.m += other.m

    @property
    def total(self) -> int:
        return int(self.m.sum())

    def compute(self) -> MetricsReport:
        """Per-class precision/recall/F1 (0/0 defined as 0) and their
        unweighted macro means; accuracy = trace / total."""
        if self.total == 0:
            raise EvaluationError("cannot compute metrics from an empty confusion matrix")
        diag = np.diag(self.m).astype(np.float64)
        col = self.m.sum(axis=0).astype(np.float64)
        row = self.m.sum(axis=1).astype(np.float64)
        precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
        recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
        pr = precision + recall
        f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
        return MetricsReport(
            accuracy=float(diag.sum() / self.total),
            macro_precision=float(precision.mean()),
            macro_recall=float(recall.mean()),
            macro_f1=float(f1.mean()),
            per_class_precision=precision.tolist(),
            per_class_recall=recall.tolist(),
            per_class_f1=f1.tolist(),
            support=self.m.sum(axis=1).tolist(),
        )
