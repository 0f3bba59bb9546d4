"""
Classification report: per-class precision, recall, f1 and support with macro and weighted averages.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from modules.core import SCHEMA_VERSION
from modules.learn import MlpModel, mlp_predict

log = logging.getLogger()


class MetricsError(Exception):
    """Generic metrics exception."""

    ...


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> Dict[str, object]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "support": self.support}


@dataclass
class ClassReport:
    classes: List[str]
    per_class: List[ClassMetrics]
    macro: ClassMetrics
    weighted: ClassMetrics
    accuracy: float
    confusion: np.ndarray

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema": "class-report",
            "schema_version": SCHEMA_VERSION,
            "classes": {name: m.to_dict() for name, m in zip(self.classes, self.per_class)},
            "macro_avg": self.macro.to_dict(),
            "weighted_avg": self.weighted.to_dict(),
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
        }

    def to_text(self, digits: int = 2) -> str:
        width = max(len("weighted avg"), *(len(c) for c in self.classes))
        header = f"{'':>{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
        lines = [header, ""]

        def row(name: str, m: ClassMetrics) -> str:
            return (
                f"{name:>{width}} {m.precision:>9.{digits}f} {m.recall:>9.{digits}f} {m.f1:>9.{digits}f}"
                f" {m.support:>9d}"
            )

        lines += [row(name, m) for name, m in zip(self.classes, self.per_class)]
        lines.append("")
        lines.append(row("macro avg", self.macro))
        lines.append(row("weighted avg", self.weighted))
        return "\n".join(lines) + "\n"


def confusion_matrix(labels: Sequence[int], predicted: Sequence[int], n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    matrix = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(matrix, (np.asarray(labels, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return matrix


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def class_report(labels: Sequence[int], predicted: Sequence[int], classes: Sequence[str]) -> ClassReport:
    """
    :param labels: true class indices
    :param predicted: predicted class indices
    :param classes: class names
    :return: ClassReport; undefined ratios (no predictions or no samples of a class) count as 0
    :raise MetricsError: for an empty test set or mismatched lengths
    """
    labels = np.asarray(labels, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if labels.size == 0:
        raise MetricsError("Cannot report on an empty test set")
    if labels.shape != predicted.shape:
        raise MetricsError(f"{labels.size} labels but {predicted.size} predictions")
    n = len(classes)
    if labels.max() >= n or predicted.max() >= n or min(labels.min(), predicted.min()) < 0:
        raise MetricsError(f"Class index outside 0..{n - 1}")

    matrix = confusion_matrix(labels, predicted, n)
    per_class = []
    for k in range(n):
        tp = float(matrix[k, k])
        precision = _ratio(tp, float(matrix[:, k].sum()))
        recall = _ratio(tp, float(matrix[k, :].sum()))
        f1 = _ratio(2 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(precision, recall, f1, int(matrix[k, :].sum())))

    total = int(labels.size)
    weights = np.array([m.support for m in per_class], dtype=float) / total

    def average(weighting: np.ndarray) -> ClassMetrics:
        return ClassMetrics(
            precision=float(np.dot(weighting, [m.precision for m in per_class])),
            recall=float(np.dot(weighting, [m.recall for m in per_class])),
            f1=float(np.dot(weighting, [m.f1 for m in per_class])),
            support=total,
        )

    return ClassReport(
        classes=list(classes),
        per_class=per_class,
        macro=average(np.full(n, 1.0 / n)),
        weighted=average(weights),
        accuracy=float(np.trace(matrix)) / total,
        confusion=matrix,
    )


def mlp_eval(model: MlpModel, X: np.ndarray, labels: Sequence[int]) -> ClassReport:
    """Argmax prediction per trial, scored against the known labels."""
    if len(labels) == 0:
        raise MetricsError("Cannot evaluate on an empty test set")
    report = class_report(labels, mlp_predict(model, X), model.classes)
    log.info(f"Evaluated {len(labels)} trials: macro f1 {report.macro.f1:.3f}, accuracy {report.accuracy:.3f}")
    return report
