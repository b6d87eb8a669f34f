"""Confusion matrix, accuracy and macro-F1 reporting.

Class order everywhere is POSITIVE, NEGATIVE, NEUTRAL (rows = gold,
columns = predicted).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import REAL_CLASSES, GoldLabel, RaterAnnotation, SentimentLabel

_CLASS_INDEX = {lbl: i for i, lbl in enumerate(REAL_CLASSES)}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # 3x3 int, rows gold, cols predicted

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvalReport:
    matrix: ConfusionMatrix
    accuracy: float
    per_class_f1: tuple
    macro_f1: float
    n: int

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.counts.tolist(),
            "class_order": [lbl.value for lbl in REAL_CLASSES],
            "accuracy": self.accuracy,
            "per_class_f1": list(self.per_class_f1),
            "macro_f1": self.macro_f1,
            "n": self.n,
        }

    def to_table(self) -> str:
        """Aligned plain-text report (classifier-comparison style)."""
        lines = ["class      gold  F1"]
        gold_counts = self.matrix.counts.sum(axis=1)
        for i, lbl in enumerate(REAL_CLASSES):
            lines.append(f"{lbl.value:<10} {gold_counts[i]:>4}  {self.per_class_f1[i]:.3f}")
        lines.append(f"accuracy {self.accuracy:.3f}  macro-F1 {self.macro_f1:.3f}  n={self.n}")
        return "\n".join(lines)


def confusion(pairs: Sequence[tuple]) -> ConfusionMatrix:
    """Tally (gold, predicted) label pairs into a 3x3 matrix."""
    counts = np.zeros((3, 3), dtype=int)
    for gold, pred in pairs:
        if gold is SentimentLabel.UNLABELED or pred is SentimentLabel.UNLABELED:
            raise ValueError("confusion matrix input must not contain UNLABELED")
        counts[_CLASS_INDEX[gold], _CLASS_INDEX[pred]] += 1
    return ConfusionMatrix(counts=counts)


def metrics(matrix: ConfusionMatrix) -> EvalReport:
    """Accuracy, per-class F1 and macro F1 from a confusion matrix.

    F1 is defined as 0 when precision + recall is 0.
    """
    counts = matrix.counts
    n = int(counts.sum())
    if n == 0:
        raise ValueError("metrics undefined for an empty confusion matrix")

    accuracy = float(np.trace(counts)) / n
    f1s = []
    for i in range(3):
        tp = counts[i, i]
        pred_i = counts[:, i].sum()
        gold_i = counts[i, :].sum()
        precision = tp / pred_i if pred_i else 0.0
        recall = tp / gold_i if gold_i else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1s.append(float(f1))
    macro = float(np.mean(f1s))
    return EvalReport(matrix=matrix, accuracy=accuracy, per_class_f1=tuple(f1s),
                      macro_f1=macro, n=n)


def evaluate_pairs(pairs: Sequence[tuple]) -> EvalReport:
    return metrics(confusion(pairs))


def compare_rater(rater: Sequence[RaterAnnotation],
                  gold: Mapping[str, GoldLabel] | Sequence[GoldLabel]) -> EvalReport:
    """Score a held-out rater's labels against gold, as if they were predictions."""
    if not isinstance(gold, Mapping):
        gold = {g.pmid: g for g in gold}
    rater_by_pmid = {a.pmid: a.label for a in rater}

    resolved = {p: g for p, g in gold.items() if g.resolved}
    missing = sorted(set(resolved) - set(rater_by_pmid))
    if missing:
        raise ValueError(f"rater file missing pmids: {missing}")

    pairs = [(g.label, rater_by_pmid[p]) for p, g in sorted(resolved.items())]
    return evaluate_pairs(pairs)
