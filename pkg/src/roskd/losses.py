"""Softmax, KL and cross-entropy primitives with analytic logit gradients."""
from __future__ import annotations

import numpy as np

from .data import MULTI, SINGLE

PROB_FLOOR = 1e-12


def log_softmax(z: np.ndarray, tau: float = 1.0) -> np.ndarray:
    s = np.asarray(z, dtype=np.float64) / tau
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def tempered_softmax(z, tau: float = 1.0) -> np.ndarray:
    """softmax(z / tau) along the last axis, max-subtracted."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return np.exp(log_softmax(z, tau))


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(np.asarray(z, dtype=np.float64)))


def kl_div(q, p) -> float:
    """KL(q || p) = sum_j q_j ln(q_j / p_j), teacher distribution first.

    ``p`` is clipped below at 1e-12; terms with ``q_j = 0`` contribute 0.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"length mismatch: {q.shape} vs {p.shape}")
    p = np.maximum(p, PROB_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
    return float(max(terms.sum(), 0.0))


def _xlogx(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q * np.log(q), 0.0)


def tempered_kl_rows(teacher_logits: np.ndarray, student_logits: np.ndarray, tau: float,
                     task_mode: str = SINGLE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise KL(sigma_tau(teacher) || sigma_tau(student)) in the log domain.

    Returns (kl per row, teacher probabilities q, student probabilities p).
    Single-label uses the softmax; multi-label sums per-class binary KLs of
    sigmoid(z / tau).
    """
    t = np.asarray(teacher_logits, dtype=np.float64)
    z = np.asarray(student_logits, dtype=np.float64)
    if task_mode == SINGLE:
        log_q = log_softmax(t, tau)
        log_p = log_softmax(z, tau)
        q = np.exp(log_q)
        kl = (q * (log_q - log_p)).sum(axis=-1)
        return kl, q, np.exp(log_p)
    log_q, log_1q = log_sigmoid(t / tau), log_sigmoid(-t / tau)
    log_p, log_1p = log_sigmoid(z / tau), log_sigmoid(-z / tau)
    q, p = np.exp(log_q), np.exp(log_p)
    kl = (_xlogx(q) - q * log_p + _xlogx(1 - q) - (1 - q) * log_1p).sum(axis=-1)
    return kl, q, p


def cross_entropy(logits, targets, task_mode: str = SINGLE, reduction: str = "mean"):
    """Cross-entropy on raw logits and its gradient w.r.t. the logits.

    Single-label targets are class indices (softmax CE); multi-label targets
    are bit masks (per-class sigmoid binary CE summed over classes).
    """
    z = np.asarray(logits, dtype=np.float64)
    L = z.shape[0]
    if task_mode == SINGLE:
        y = np.asarray(targets, dtype=np.int64)
        if y.shape != (L,):
            raise ValueError("targets must be one class index per row")
        ls = log_softmax(z)
        per_row = -ls[np.arange(L), y]
        grad = np.exp(ls)
        grad[np.arange(L), y] -= 1.0
    elif task_mode == MULTI:
        y = np.asarray(targets, dtype=np.float64)
        if y.shape != z.shape:
            raise ValueError("multi-label targets must match logits shape")
        per_row = -(y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z)).sum(axis=-1)
        grad = sigmoid(z) - y
    else:
        raise ValueError(f"unknown task mode {task_mode!r}")
    if reduction == "mean":
        return float(per_row.mean()), grad / L
    if reduction == "sum":
        return float(per_row.sum()), grad
    raise ValueError(f"unknown reduction {reduction!r}")
