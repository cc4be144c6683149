"""Multi-label attribute metrics: label-based mA plus Acc/Prec/Recall/F1.

Counts are integers and per-instance tallies are kept as a histogram of
``(|pred & true|, |pred|, |true|)`` triples, so merging shards is exact
integer addition and every score is independent of batch order.
"""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

KEYS = ("mA", "Acc", "Prec", "Recall", "F1")


class EvaluationError(ValueError):
    pass


@dataclass
class ConfusionCounts:
    num_attributes: int
    tp: np.ndarray = None
    tn: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None
    instances: Counter = field(default_factory=Counter)

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_attributes, dtype=np.int64))

    @property
    def samples_seen(self) -> int:
        return int(sum(self.instances.values()))

    def accumulate(self, predictions: np.ndarray, labels: np.ndarray) -> "ConfusionCounts":
        """Add a batch of binary predictions and labels ([B, M]) in place."""
        pred = np.asarray(predictions)
        true = np.asarray(labels)
        if pred.shape != true.shape or pred.ndim != 2 or pred.shape[1] != self.num_attributes:
            raise ValueError(f"accumulate: predictions {pred.shape} and labels {true.shape} "
                             f"must both be [B, {self.num_attributes}]")
        p = pred.astype(bool)
        y = true.astype(bool)
        self.tp += (p & y).sum(axis=0)
        self.tn += (~p & ~y).sum(axis=0)
        self.fp += (p & ~y).sum(axis=0)
        self.fn += (~p & y).sum(axis=0)
        inter = (p & y).sum(axis=1)
        self.instances.update(zip(inter.tolist(), p.sum(axis=1).tolist(), y.sum(axis=1).tolist()))
        return self

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.num_attributes != self.num_attributes:
            raise ValueError("cannot merge counts over different attribute sets")
        return ConfusionCounts(self.num_attributes, self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn,
                               self.instances + other.instances)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionCounts) and self.num_attributes == other.num_attributes
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("tp", "tn", "fp", "fn"))
                and self.instances == other.instances)


def threshold(scores: np.ndarray, cutoff: float = 0.5) -> np.ndarray:
    """Binary predictions from sigmoid probabilities."""
    return (np.asarray(scores) >= cutoff).astype(np.uint8)


@dataclass
class MetricsReport:
    mA: float
    Acc: float
    Prec: float
    Recall: float
    F1: float
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in KEYS}

    def to_text(self) -> str:
        return "".join(f"{k}={getattr(self, k):.5f}\n" for k in KEYS)

    def write(self, stem: str | os.PathLike) -> tuple[Path, Path]:
        """Write ``<stem>.txt`` and ``<stem>.json``."""
        stem = Path(stem)
        txt, js = stem.with_suffix(".txt"), stem.with_suffix(".json")
        txt.write_text(self.to_text(), encoding="utf-8")
        payload = self.as_dict()
        if self.flags:
            payload["flags"] = list(self.flags)
        js.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")
        return txt, js


def label_based_mA(counts: ConfusionCounts, strict: bool = False,
                   attributes: list[str] | None = None) -> float:
    """Mean over attributes of the average of true-positive and true-negative rates.

    In strict mode an attribute without positives (or negatives) is an
    error; otherwise its undefined half is left out of the average.
    """
    terms = []
    for j in range(counts.num_attributes):
        pos = int(counts.tp[j] + counts.fn[j])
        neg = int(counts.tn[j] + counts.fp[j])
        name = attributes[j] if attributes else f"#{j}"
        if strict and (pos == 0 or neg == 0):
            kind = "positive" if pos == 0 else "negative"
            raise EvaluationError(f"attribute {name} has no {kind} samples")
        if pos:
            terms.append(counts.tp[j] / pos)
        if neg:
            terms.append(counts.tn[j] / neg)
    return float(np.mean(terms)) if terms else 0.0


def _ratio(num, den, flags: list[str], what: str) -> Fraction:
    if den == 0:
        if what not in flags:
            flags.append(what)
        return Fraction(0)
    return Fraction(int(num), int(den))


def instance_metrics(counts: ConfusionCounts, mode: str = "instance",
                     flags: list[str] | None = None) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall and F1.

    ``mode="instance"`` averages per-sample set scores (accuracy is
    intersection over union); ``mode="count"`` applies the count formulas
    to TP/TN/FP/FN pooled over all attributes. Zero denominators score 0
    and add an entry to ``flags``.
    """
    flags = [] if flags is None else flags
    if mode == "count":
        tp, tn, fp, fn = (int(a.sum()) for a in (counts.tp, counts.tn, counts.fp, counts.fn))
        acc = _ratio(tp + tn, tp + tn + fp + fn, flags, "zero_total")
        prec = _ratio(tp, tp + fp, flags, "zero_predicted_positive")
        rec = _ratio(tp, tp + fn, flags, "zero_true_positive")
    elif mode == "instance":
        n = counts.samples_seen
        if n == 0:
            raise EvaluationError("no samples accumulated")
        acc_sum = prec_sum = rec_sum = Fraction(0)
        for (inter, npred, ntrue), mult in sorted(counts.instances.items()):
            acc_sum += mult * _ratio(inter, npred + ntrue - inter, flags, "empty_union")
            prec_sum += mult * _ratio(inter, npred, flags, "empty_prediction")
            rec_sum += mult * _ratio(inter, ntrue, flags, "empty_label_set")
        acc, prec, rec = acc_sum / n, prec_sum / n, rec_sum / n
    else:
        raise ValueError(f"unknown metric mode {mode!r}")
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else _ratio(0, 0, flags, "zero_f1_denominator")
    return float(acc), float(prec), float(rec), float(f1)


def report(counts: ConfusionCounts, mode: str = "instance", strict: bool = False,
           attributes: list[str] | None = None) -> MetricsReport:
    flags: list[str] = []
    acc, prec, rec, f1 = instance_metrics(counts, mode, flags)
    return MetricsReport(label_based_mA(counts, strict, attributes), acc, prec, rec, f1, flags)


def evaluate_predictions(predictions: np.ndarray, labels: np.ndarray, mode: str = "instance") -> MetricsReport:
    counts = ConfusionCounts(np.asarray(labels).shape[1]).accumulate(predictions, labels)
    return report(counts, mode)
