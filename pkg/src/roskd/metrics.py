"""Macro precision/recall/F1, AUROC, and confusion counts."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import MULTI, SINGLE, LabeledDataset
from .losses import sigmoid, tempered_softmax
from .nn import ParamVector, forward

AVERAGING = "macro"
MULTI_LABEL_THRESHOLD = 0.5


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    per_class_auc: list
    mean_auc: float | None
    confusion: list
    n_samples: int
    task_mode: str = SINGLE
    averaging: str = AVERAGING

    def to_dict(self) -> dict:
        return asdict(self)

    def prf1(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def per_class_counts(predictions, labels, mode: str = SINGLE, n_classes: int | None = None):
    """(tp, fp, fn) arrays of length C."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise ValueError(f"predictions {pred.shape} and labels {lab.shape} differ in shape")
    if mode == SINGLE:
        C = n_classes if n_classes is not None else int(max(pred.max(initial=0), lab.max(initial=0))) + 1
        P = pred[:, None] == np.arange(C)
        Y = lab[:, None] == np.arange(C)
    elif mode == MULTI:
        P, Y = pred.astype(bool), lab.astype(bool)
    else:
        raise ValueError(f"unknown task mode {mode!r}")
    return (P & Y).sum(0), (P & ~Y).sum(0), (~P & Y).sum(0)


def prf1(predictions, labels, mode: str = SINGLE, n_classes: int | None = None) -> tuple[float, float, float]:
    """Macro-averaged precision, recall and F1; empty denominators count as 0."""
    tp, fp, fn = per_class_counts(predictions, labels, mode, n_classes)
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return float(precision.mean()), float(recall.mean()), float(f1.mean())


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    # tie groups share the mean of their 1-based positions
    edges = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(x)]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def auroc(scores, binary_labels) -> float | None:
    """Mann-Whitney AUROC with ties counted as 1/2; None for single-class input."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(binary_labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(predictions)), 1)
    return m


def report_from_logits(logits: np.ndarray, labels: np.ndarray, mode: str, n_classes: int) -> MetricsReport:
    if len(logits) == 0:
        raise ValueError("cannot report on an empty split")
    if mode == SINGLE:
        scores = tempered_softmax(logits)
        pred = logits.argmax(axis=1)
        truth = np.asarray(labels)
        onehot = truth[:, None] == np.arange(n_classes)
        confusion = confusion_matrix(pred, truth, n_classes).tolist()
    else:
        scores = sigmoid(logits)
        pred = (scores >= MULTI_LABEL_THRESHOLD).astype(np.int8)
        truth = np.asarray(labels).astype(np.int8)
        onehot = truth.astype(bool)
        tp, fp, fn = per_class_counts(pred, truth, MULTI)
        tn = len(truth) - tp - fp - fn
        # per class [[tn, fp], [fn, tp]]
        confusion = [[[int(tn[j]), int(fp[j])], [int(fn[j]), int(tp[j])]] for j in range(n_classes)]
    P, R, F = prf1(pred, truth, mode, n_classes)
    aucs = [auroc(scores[:, j], onehot[:, j]) for j in range(n_classes)]
    defined = [a for a in aucs if a is not None]
    mean_auc = float(np.mean(defined)) if defined else None
    return MetricsReport(P, R, F, aucs, mean_auc, confusion, len(truth), mode)


def full_report(model: ParamVector, dataset_split: LabeledDataset, mode: str | None = None) -> MetricsReport:
    """Evaluate ``model`` against the clean labels of a split."""
    mode = mode or dataset_split.task_mode
    if len(dataset_split.features) == 0:
        raise ValueError("cannot report on an empty split")
    logits = forward(model, dataset_split.features)
    return report_from_logits(logits, dataset_split.clean_labels, mode, dataset_split.n_classes)
