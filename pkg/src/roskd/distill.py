"""Stochastic multi-teacher distillation with running parameter averaging.

Per mini-batch the student minimizes

    alpha * tau^2 * sum_m w_m KL(sigma_tau(teacher_m), sigma_tau(student))
        + (1 - alpha) * CE(student, noisy label)

with teacher weights ``w`` drawn fresh each iteration. After the warmup epochs
the end-of-epoch weights are folded into a running arithmetic mean, which is
the final smoothed student.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import SINGLE, LabeledDataset
from .losses import cross_entropy, kl_div, tempered_kl_rows, tempered_softmax  # noqa: F401
from .metrics import full_report
from .nn import ModelSpec, OptimState, ParamVector, backward, forward, init_model, lr_at_epoch, sgd_step
from .seeding import derive_rng
from .teachers import TeacherEnsemble, batches, teacher_logits

EXPONENTIAL = "exponential"
EQUAL = "equal"
SINGLE_TEACHER = "single"
SAMPLERS = (EXPONENTIAL, EQUAL, SINGLE_TEACHER)
WEIGHT_TOL = 1e-12


@dataclass
class DistillConfig:
    alpha: float = 0.9
    tau: float = 0.5
    sampler: str = EXPONENTIAL
    rate: float = 1.0
    single_teacher: int = 0
    averaging_enabled: bool = True
    warmup_epochs: int = 10
    epochs: int = 50
    batch: int = 64
    seed: int = 0
    # "iteration": one weight draw per mini-batch; "example": one draw per sample
    weight_granularity: str = "iteration"
    opt: OptimState = field(default_factory=OptimState)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.rate <= 0:
            raise ValueError("exponential rate must be positive")
        if self.averaging_enabled and not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be in [0, epochs)")
        if self.weight_granularity not in ("iteration", "example"):
            raise ValueError(f"unknown weight granularity {self.weight_granularity!r}")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["opt"] = self.opt.to_dict()
        return d


@dataclass(frozen=True)
class TeacherWeights:
    w: np.ndarray
    draw_seed: int | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > WEIGHT_TOL):
            raise ValueError("teacher weights must be non-negative and sum to 1")
        object.__setattr__(self, "w", w)


def sample_weights(K: int, sampler: str = EXPONENTIAL, draw_seed=None, *, rate: float = 1.0,
                   single_teacher: int = 0, size: int | None = None) -> TeacherWeights:
    """Draw teacher weights on the simplex.

    ``draw_seed`` may be an int or a ``numpy.random.Generator``. With ``size``
    set, returns ``size`` independent rows (per-example weighting).
    """
    if K < 1:
        raise ValueError("need at least one teacher")
    shape = (K,) if size is None else (size, K)
    if sampler == EXPONENTIAL:
        rng = draw_seed if isinstance(draw_seed, np.random.Generator) else np.random.default_rng(draw_seed)
        raw = rng.exponential(1.0 / rate, size=shape)
        w = raw / raw.sum(axis=-1, keepdims=True)
    elif sampler == EQUAL:
        w = np.full(shape, 1.0 / K)
    elif sampler == SINGLE_TEACHER:
        if not 0 <= single_teacher < K:
            raise ValueError(f"single teacher index {single_teacher} out of range for K={K}")
        w = np.zeros(shape)
        w[..., single_teacher] = 1.0
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    seed = draw_seed if isinstance(draw_seed, (int, np.integer)) else None
    return TeacherWeights(w, seed)


def distill_loss_from_logits(z, y, t_logits, weights, alpha: float, tau: float,
                             task_mode: str = SINGLE, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. student logits ``z``.

    ``t_logits`` is (K, L, C); ``weights`` is (K,) or per-example (L, K).
    ``reduction="sum"`` is the plain sum over the batch; "mean" divides by L.
    """
    z = np.asarray(z, dtype=np.float64)
    L, C = z.shape
    w = weights.w if isinstance(weights, TeacherWeights) else np.asarray(weights, dtype=np.float64)
    ce, dce = cross_entropy(z, y, task_mode, reduction="sum")
    loss, grad = (1.0 - alpha) * ce, (1.0 - alpha) * dce
    if alpha > 0:
        t = np.asarray(t_logits, dtype=np.float64)
        if t.ndim != 3 or t.shape[1:] != (L, C):
            raise ValueError(f"teacher logits shape {t.shape} incompatible with student logits {z.shape}")
        K = t.shape[0]
        w_rows = np.broadcast_to(w, (L, K)) if w.ndim == 1 else w
        if w_rows.shape != (L, K):
            raise ValueError(f"weights shape {w.shape} incompatible with {K} teachers")
        if np.any(w_rows < 0) or np.any(np.abs(w_rows.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise ValueError("teacher weights must be non-negative and sum to 1")
        kl_total = 0.0
        q_mix = np.zeros_like(z)
        p = None
        for m in range(K):
            kl, q, p = tempered_kl_rows(t[m], z, tau, task_mode)
            kl_total += float((w_rows[:, m] * kl).sum())
            q_mix += w_rows[:, m:m + 1] * q
        loss += alpha * tau ** 2 * kl_total
        # d/dz of tau^2 KL(q, sigma_tau(z)) is tau * (p - q) for softmax and per-class sigmoid alike
        grad = grad + alpha * tau * (p - q_mix)
    if reduction == "mean":
        return loss / L, grad / L
    if reduction == "sum":
        return loss, grad
    raise ValueError(f"unknown reduction {reduction!r}")


def distill_loss(student_params: ParamVector, x, y, t_logits, weights, cfg: DistillConfig,
                 task_mode: str = SINGLE, reduction: str = "mean") -> tuple[float, np.ndarray]:
    z = forward(student_params, x)
    return distill_loss_from_logits(z, y, t_logits, weights, cfg.alpha, cfg.tau, task_mode, reduction)


@dataclass(frozen=True)
class AveragingState:
    n: int = 0
    smooth_params: ParamVector | None = None


def averaging_update(state: AveragingState, current: ParamVector) -> AveragingState:
    """Running arithmetic mean: (smooth * n + current) / (n + 1)."""
    if state.n == 0 or state.smooth_params is None:
        return AveragingState(1, current.copy())
    if state.smooth_params.spec.layer_widths != current.spec.layer_widths:
        raise ValueError("checkpoint architecture differs from the running average")
    n = state.n
    values = (state.smooth_params.values * n + current.values) / (n + 1)
    return AveragingState(n + 1, ParamVector(values, current.spec))


def run_distillation(student_spec: ModelSpec, dataset: LabeledDataset, ensemble: TeacherEnsemble | None,
                     cfg: DistillConfig, val: LabeledDataset | None = None,
                     on_epoch_end: Callable[[int, ParamVector], None] | None = None,
                     ) -> tuple[ParamVector, ParamVector, list[dict]]:
    """Train the student; returns (final weights M, averaged weights M_smooth, history).

    ``dataset`` is the training split (noisy labels are the hard targets).
    With averaging disabled, M_smooth is M.
    """
    if ensemble is None and cfg.alpha > 0:
        raise ValueError("distillation with alpha > 0 needs a teacher ensemble")
    K = len(ensemble) if ensemble is not None else 0
    x, y = dataset.features, dataset.noisy_labels
    params = init_model(student_spec)
    opt = cfg.opt.fresh()
    batch_rng = derive_rng(cfg.seed, "distill-batches")
    weight_rng = derive_rng(cfg.seed, "teacher-weights")
    avg = AveragingState()
    history = []
    for epoch in range(cfg.epochs):
        total, w_sum, n_draws = 0.0, np.zeros(K), 0
        for b in batches(len(x), cfg.batch, batch_rng):
            if cfg.alpha > 0:
                size = len(b) if cfg.weight_granularity == "example" else None
                w = sample_weights(K, cfg.sampler, weight_rng, rate=cfg.rate,
                                   single_teacher=cfg.single_teacher, size=size)
                t = teacher_logits(ensemble, x[b])
                w_sum += w.w if w.w.ndim == 1 else w.w.mean(axis=0)
                n_draws += 1
            else:
                w, t = np.zeros(0), None
            loss, dz = distill_loss(params, x[b], y[b], t, w, cfg, dataset.task_mode)
            params = sgd_step(params, backward(params, x[b], dz), opt, epoch)
            total += loss * len(b)
        active = cfg.averaging_enabled and epoch + 1 > cfg.warmup_epochs
        if active:
            avg = averaging_update(avg, params)
        if on_epoch_end is not None:
            on_epoch_end(epoch, params)
        record = {"epoch": epoch, "train_loss": total / len(x), "lr": lr_at_epoch(opt, epoch),
                  "mean_weights": (w_sum / n_draws).tolist() if n_draws else [],
                  "averaging_active": active}
        if val is not None:
            record["val_F1"] = full_report(params, val).f1
        history.append(record)
    smooth = avg.smooth_params if (cfg.averaging_enabled and avg.n > 0) else params
    return params, smooth, history
