"""Evaluation measures: accuracy, macro-F1, Matthews correlation, Pearson r.

Edge-case conventions (the measures' definitions leave these open):
a class with precision + recall = 0 contributes F1 = 0 to the macro
average, a zero denominator makes the Matthews coefficient 0, and a
constant sequence makes Pearson r 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "MetricKind",
    "MetricValue",
    "accuracy",
    "macro_f1",
    "matthews_corr",
    "pearson_corr",
    "evaluate",
]


class MetricKind(str, Enum):
    ACCURACY = "accuracy"
    MACRO_F1 = "macro_f1"
    MATTHEWS = "matthews"
    PEARSON = "pearson"

    @property
    def percent_scale(self) -> bool:
        """True for measures conventionally reported as percentages."""
        return self in (MetricKind.ACCURACY, MetricKind.MACRO_F1)


@dataclass(frozen=True)
class MetricValue:
    kind: MetricKind
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value}")
        lo = 0.0 if self.kind.percent_scale else -1.0
        if not lo - 1e-12 <= self.value <= 1.0 + 1e-12:
            raise ValueError(f"{self.kind.value} out of range [{lo}, 1]: {self.value}")


def _check_labels(preds, golds) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if preds.shape != golds.shape or preds.ndim != 1:
        raise ValueError(f"prediction/gold shapes disagree: {preds.shape} vs {golds.shape}")
    if preds.shape[0] == 0:
        raise ValueError("empty input")
    return preds, golds


def accuracy(preds, golds) -> float:
    """Fraction of exact matches."""
    preds, golds = _check_labels(preds, golds)
    return float(np.mean(preds == golds))


def macro_f1(preds, golds, n_classes: int) -> float:
    """Unweighted mean over classes of per-class F1 = 2PR/(P+R)."""
    preds, golds = _check_labels(preds, golds)
    for name, labels in (("preds", preds), ("golds", golds)):
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError(f"{name} contain labels outside [0, {n_classes})")
    f1s = []
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (golds == c)))
        fp = int(np.sum((preds == c) & (golds != c)))
        fn = int(np.sum((preds != c) & (golds == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def matthews_corr(preds, golds) -> float:
    """Matthews correlation coefficient for binary labels.

    (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)), with the
    convention that a zero denominator (any constant row or column of the
    confusion matrix) yields 0.
    """
    preds, golds = _check_labels(preds, golds)
    if not (set(np.unique(preds)) | set(np.unique(golds))) <= {0, 1}:
        raise ValueError("matthews_corr requires binary labels in {0, 1}")
    tp = int(np.sum((preds == 1) & (golds == 1)))
    tn = int(np.sum((preds == 0) & (golds == 0)))
    fp = int(np.sum((preds == 1) & (golds == 0)))
    fn = int(np.sum((preds == 0) & (golds == 1)))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(denom))


def pearson_corr(preds, golds) -> float:
    """Sample Pearson correlation; constant input yields 0 by convention."""
    preds = np.asarray(preds, dtype=np.float64)
    golds = np.asarray(golds, dtype=np.float64)
    if preds.shape != golds.shape or preds.ndim != 1:
        raise ValueError(f"prediction/gold shapes disagree: {preds.shape} vs {golds.shape}")
    if preds.shape[0] < 2:
        raise ValueError("pearson_corr needs at least 2 points")
    dx = preds - preds.mean()
    dy = golds - golds.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.sum(dx * dy) / denom, -1.0, 1.0))


def evaluate(spec, preds, golds) -> MetricValue:
    """Score predictions with the measure bound to the task."""
    kind = spec.metric
    if kind is MetricKind.ACCURACY:
        value = accuracy(preds, golds)
    elif kind is MetricKind.MACRO_F1:
        value = macro_f1(preds, golds, spec.n_classes)
    elif kind is MetricKind.MATTHEWS:
        value = matthews_corr(preds, golds)
    elif kind is MetricKind.PEARSON:
        value = pearson_corr(preds, golds)
    else:
        raise ValueError(f"unknown metric kind: {kind!r}")
    return MetricValue(kind=kind, value=value)
