"""Evaluation metrics and statistical comparisons.

Conventions, fixed once and used everywhere: confusion rows are true
grades and columns predictions; any 0/0 rate is 0; macro averages run
over classes present in ground truth only; weighted averages use
true-class frequencies.  One-vs-rest AUROC uses average ranks, which is
exactly the tie=0.5 pair-counting definition.  The paired t-test gets
its p-value from the regularized incomplete beta function.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.special
import scipy.stats

from .errors import ConfigError, DegenerateInputError

Array = np.ndarray


def confusion_matrix(y_true, y_pred, num_grades: int) -> Array:
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ConfigError("label vectors must be 1-d and equal length")
    if t.size == 0:
        raise ConfigError("empty label vectors")
    for name, v in (("true", t), ("pred", p)):
        if v.min() < 0 or v.max() >= num_grades:
            raise ConfigError(f"{name} labels outside [0, {num_grades - 1}]")
    cm = np.zeros((num_grades, num_grades), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def mae(y_true, y_pred) -> float:
    t = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    return float(np.mean(np.abs(t - p)))


@dataclass
class MetricsReport:
    num_grades: int
    n: int
    accuracy: float
    precision: Array
    recall: Array
    f1: Array
    specificity: Array
    support: Array
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_specificity: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    weighted_specificity: float
    mae: float
    confusion: Array
    auroc_macro: float | None = None
    auroc_per_class: dict[int, float] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        per_class = {
            str(c): {
                "precision": float(self.precision[c]),
                "recall": float(self.recall[c]),
                "f1": float(self.f1[c]),
                "specificity": float(self.specificity[c]),
                "support": int(self.support[c]),
                "auroc": self.auroc_per_class.get(c),
            }
            for c in range(self.num_grades)
        }
        return {
            "n": self.n,
            "num_grades": self.num_grades,
            "accuracy": self.accuracy,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
                "specificity": self.macro_specificity,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
                "specificity": self.weighted_specificity,
            },
            "auroc_macro": self.auroc_macro,
            "mae": self.mae,
            "per_class": per_class,
            "confusion": self.confusion.tolist(),
            "provenance": self.provenance,
        }

    def csv_header(self) -> list[str]:
        cols = ["n", "accuracy",
                "macro_precision", "macro_recall", "macro_f1", "macro_specificity",
                "weighted_precision", "weighted_recall", "weighted_f1",
                "weighted_specificity", "auroc_macro", "mae"]
        for c in range(self.num_grades):
            cols += [f"class{c}_precision", f"class{c}_recall", f"class{c}_f1",
                     f"class{c}_specificity", f"class{c}_support"]
        return cols

    def csv_row(self) -> list:
        row = [self.n, self.accuracy,
               self.macro_precision, self.macro_recall, self.macro_f1,
               self.macro_specificity,
               self.weighted_precision, self.weighted_recall, self.weighted_f1,
               self.weighted_specificity,
               "" if self.auroc_macro is None else self.auroc_macro,
               self.mae]
        for c in range(self.num_grades):
            row += [float(self.precision[c]), float(self.recall[c]), float(self.f1[c]),
                    float(self.specificity[c]), int(self.support[c])]
        return row

    def save(self, json_path=None, csv_path=None, confusion_path=None) -> None:
        if json_path is not None:
            with open(json_path, "w", encoding="ascii") as fh:
                json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="ascii") as fh:
                writer = csv.writer(fh)
                writer.writerow(self.csv_header())
                writer.writerow(self.csv_row())
        if confusion_path is not None:
            with open(confusion_path, "w", newline="", encoding="ascii") as fh:
                writer = csv.writer(fh)
                writer.writerow(["true\\pred"] + [str(c) for c in range(self.num_grades)])
                for c in range(self.num_grades):
                    writer.writerow([c] + [int(x) for x in self.confusion[c]])


def _safe_div(num: Array, den: Array) -> Array:
    out = np.zeros_like(num, dtype=np.float64)
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


def classification_metrics(cm: Array) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    if cm.shape != (k, k) or np.any(cm < 0):
        raise ConfigError("confusion matrix must be square and non-negative")
    n = int(cm.sum())
    if n == 0:
        raise ConfigError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    fp = predicted - tp
    fn = support - tp
    tn = n - tp - fp - fn
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    specificity = _safe_div(tn, tn + fp)
    present = support > 0

    def macro(values: Array) -> float:
        return float(values[present].mean())

    def weighted(values: Array) -> float:
        return float((support[present] * values[present]).sum() / n)

    return MetricsReport(
        num_grades=k,
        n=n,
        accuracy=float(tp.sum() / n),
        precision=precision,
        recall=recall,
        f1=f1,
        specificity=specificity,
        support=support.astype(np.int64),
        macro_precision=macro(precision),
        macro_recall=macro(recall),
        macro_f1=macro(f1),
        macro_specificity=macro(specificity),
        weighted_precision=weighted(precision),
        weighted_recall=weighted(recall),
        weighted_f1=weighted(f1),
        weighted_specificity=weighted(specificity),
        mae=0.0,
        confusion=cm,
    )


def macro_f1_score(y_true, y_pred, num_grades: int) -> float:
    return classification_metrics(confusion_matrix(y_true, y_pred, num_grades)).macro_f1


def auroc_ovr(scores: Array, y_true, num_grades: int) -> tuple[float, dict[int, float]]:
    """One-vs-rest AUROC per class and the macro mean over valid classes.

    A class is valid when it has at least one positive and one negative.
    Average-rank computation equals pair counting with ties worth 0.5.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.int64)
    if s.ndim != 2 or s.shape != (y.size, num_grades):
        raise ConfigError(f"scores must be (n, {num_grades})")
    per_class: dict[int, float] = {}
    for c in range(num_grades):
        pos = y == c
        n_pos = int(pos.sum())
        n_neg = y.size - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = scipy.stats.rankdata(s[:, c])
        rank_sum = ranks[pos].sum()
        auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        per_class[c] = float(auc)
    if not per_class:
        raise DegenerateInputError("no class has both positives and negatives")
    return float(np.mean(list(per_class.values()))), per_class


def build_report(y_true, y_pred, num_grades: int, scores: Array | None = None,
                 provenance: dict | None = None) -> MetricsReport:
    cm = confusion_matrix(y_true, y_pred, num_grades)
    report = classification_metrics(cm)
    report.mae = mae(y_true, y_pred)
    if scores is not None:
        report.auroc_macro, report.auroc_per_class = auroc_ovr(scores, y_true, num_grades)
    if provenance:
        report.provenance = dict(provenance)
    return report


def bootstrap_ci(metric_fn, y_true, y_pred, n_resamples: int = 1000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap over (label, prediction) pairs."""
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.size == 0 or t.shape != p.shape:
        raise ConfigError("bootstrap needs matching non-empty label vectors")
    if not (0.0 < level < 1.0) or n_resamples < 1:
        raise ConfigError("bad bootstrap parameters")
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples, dtype=np.float64)
    n = t.size
    for b in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        stats[b] = metric_fn(t[idx], p[idx])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test; p from the regularized incomplete beta."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ConfigError("paired t-test needs two equal-length vectors, n >= 2")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateInputError("differences have zero variance")
    n = d.size
    t_stat = d.mean() / (sd / np.sqrt(n))
    df = n - 1
    p = float(scipy.special.betainc(df / 2.0, 0.5, df / (df + t_stat ** 2)))
    return float(t_stat), p
