"""Evaluation metrics for imbalanced, continually trained classifiers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "EvalResult",
    "auc_macro",
    "auc_one_vs_rest",
    "cohens_d",
    "evaluate",
    "forgetting",
    "imbalance_factor",
    "ltr_accuracy",
    "mean_over_seen",
    "overall_accuracy",
    "per_class_recall",
]


def _check_pair(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.size != y.size:
        raise ValueError(f"{p.size} predictions for {y.size} labels")
    if y.size == 0:
        raise ValueError("empty input")
    return p, y


def per_class_recall(predictions, labels, n_classes: int) -> np.ndarray:
    """Recall per class; NaN for classes absent from ``labels``."""
    p, y = _check_pair(predictions, labels)
    hits = np.bincount(y[p == y], minlength=n_classes).astype(float)
    support = np.bincount(y, minlength=n_classes).astype(float)
    out = np.full(n_classes, np.nan)
    present = support > 0
    out[present] = hits[present] / support[present]
    return out


def ltr_accuracy(predictions, labels, n_classes: int) -> float:
    """Mean per-class recall over the classes present in ``labels``.

    Absent classes (N_j = 0) are left out of the mean; :func:`evaluate`
    reports them in ``EvalResult.absent_classes``.
    """
    return float(np.nanmean(per_class_recall(predictions, labels, n_classes)))


def overall_accuracy(predictions, labels) -> float:
    p, y = _check_pair(predictions, labels)
    return float(np.mean(p == y))


def imbalance_factor(counts: Sequence[int]) -> float:
    """Largest class count over smallest."""
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0:
        raise ValueError("no counts")
    if np.any(c <= 0):
        raise ValueError(f"imbalance factor is undefined with a zero count: {c.tolist()}")
    return float(c.max() / c.min())


def auc_one_vs_rest(scores, positives) -> float:
    """ROC AUC from the Mann-Whitney rank statistic; tied scores take midranks.

    Returns NaN unless both positives and negatives are present.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(positives, dtype=bool).reshape(-1)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_per_class(scores: np.ndarray, labels, n_classes: int) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if s.ndim != 2 or s.shape != (y.size, n_classes):
        raise ValueError(f"scores must have shape ({y.size}, {n_classes}), got {s.shape}")
    return np.array([auc_one_vs_rest(s[:, j], y == j) for j in range(n_classes)])


def auc_macro(scores: np.ndarray, labels, n_classes: int) -> float:
    """Macro mean of one-vs-rest AUCs over classes with positives and negatives.

    NaN when no class qualifies.
    """
    per = auc_per_class(scores, labels, n_classes)
    return float(np.nanmean(per)) if np.any(~np.isnan(per)) else float("nan")


def mean_over_seen(row: Sequence[float]) -> float:
    """Average of a metric over the tasks seen so far (entries (t, 1..t))."""
    r = np.asarray(row, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty row")
    return float(r.mean())


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """(mean(a) - mean(b)) / pooled standard deviation with (n - 1) weighting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if pooled <= 0:
        raise ValueError("pooled variance is zero")
    return float((a.mean() - b.mean()) / np.sqrt(pooled))


def forgetting(matrix: np.ndarray) -> np.ndarray:
    """Per task j: best score on j at any point from t = j on, minus the final score.

    ``matrix[t, j]`` is the metric on task j after training task t (lower
    triangle used).
    """
    m = np.asarray(matrix, dtype=np.float64)
    T = m.shape[0]
    if T < 2 or m.shape != (T, T):
        raise ValueError("need a square matrix with T >= 2")
    return np.array([m[j:, j].max() - m[T - 1, j] for j in range(T)])


@dataclass
class EvalResult:
    ltr: float
    accuracy: float
    recall: np.ndarray
    auc: float
    counts: np.ndarray
    auc_per_class: np.ndarray = field(repr=False)
    absent_classes: tuple[int, ...] = ()

    def recall_of(self, label: int) -> float:
        return float(self.recall[label])

    def ltr_excluding(self, label: int) -> float:
        """Mean recall over present classes other than ``label``."""
        r = np.delete(self.recall, label)
        return float(np.nanmean(r)) if np.any(~np.isnan(r)) else float("nan")

    def as_dict(self, novel_label: int | None = None) -> dict[str, float]:
        out = {"ltr": self.ltr, "accuracy": self.accuracy, "auc": self.auc}
        if novel_label is not None:
            out["nonnovel_ltr"] = self.ltr_excluding(novel_label)
            out["novel_recall"] = self.recall_of(novel_label)
            out["novel_auc"] = float(self.auc_per_class[novel_label])
        return out


def evaluate(probabilities: np.ndarray, labels, n_classes: int) -> EvalResult:
    """Metrics of a probability matrix against true labels (argmax, lowest index on ties)."""
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    preds = np.argmax(probs, axis=1)
    recall = per_class_recall(preds, y, n_classes)
    per_auc = auc_per_class(probs, y, n_classes)
    counts = np.bincount(y, minlength=n_classes)
    return EvalResult(
        ltr=float(np.nanmean(recall)),
        accuracy=overall_accuracy(preds, y),
        recall=recall,
        auc=float(np.nanmean(per_auc)) if np.any(~np.isnan(per_auc)) else float("nan"),
        counts=counts,
        auc_per_class=per_auc,
        absent_classes=tuple(int(j) for j in np.flatnonzero(counts == 0)),
    )
