"""White-box l2 FGSM / PGD attacks and before/after robustness evaluation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import LabeledDataset
from .losses import cross_entropy
from .metrics import MetricsReport, full_report
from .nn import ParamVector, forward, input_gradient

GRAD_FLOOR = 1e-12
# projection leaves points within eps * (1 + PROJ_SLACK) untouched so a
# single full step is not perturbed by rounding
PROJ_SLACK = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "PGD"
    norm: str = "l2"
    epsilon: float = 128 / 255
    pgd_steps: int = 10
    pgd_step_size: float | None = None
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("FGSM", "PGD"):
            raise ValueError(f"unknown attack {self.kind!r}")
        if self.norm != "l2":
            raise ValueError("only the l2 norm is supported")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be >= 1")
        if self.pgd_step_size is not None and not self.pgd_step_size > 0:
            raise ValueError("pgd_step_size must be positive")

    @property
    def step_size(self) -> float:
        return self.pgd_step_size if self.pgd_step_size is not None else self.epsilon / 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pgd_step_size"] = self.step_size
        return d


def loss_input_gradient(params: ParamVector, x, y, task_mode: str = "single-label") -> np.ndarray:
    """Per-sample gradient of the summed training loss w.r.t. the inputs."""
    x = np.asarray(x, dtype=np.float64)
    z = forward(params, x)
    _, dz = cross_entropy(z, y, task_mode, reduction="sum")
    return input_gradient(params, x, dz).reshape(x.shape)


def _unit_rows(g: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.divide(g, norms, out=np.zeros_like(g), where=norms >= GRAD_FLOOR)


def _clip(x, bounds):
    return x if bounds is None else np.clip(x, bounds[0], bounds[1])


def project_l2(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Pull every row of ``x_adv`` back into the l2 ball of radius ``eps`` around ``x``."""
    delta = x_adv - x
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    outside = norms > eps * (1 + PROJ_SLACK)
    factor = np.divide(eps, norms, out=np.ones_like(norms), where=outside)
    return np.where(outside, x + delta * factor, x_adv)


def fgsm_l2(params: ParamVector, x, y, eps: float, task_mode: str = "single-label",
            bounds=None) -> np.ndarray:
    """x + eps * g / ||g|| per sample; rows with vanishing gradient stay put."""
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = loss_input_gradient(params, x, y, task_mode)
    return _clip(x + eps * _unit_rows(g), bounds)


def _random_ball(rng: np.random.Generator, shape, eps: float) -> np.ndarray:
    d = rng.standard_normal(shape)
    d = _unit_rows(d)
    r = eps * rng.random((shape[0], 1)) ** (1.0 / shape[1])
    return d * r


def pgd_l2(params: ParamVector, x, y, cfg: AttackConfig, task_mode: str = "single-label",
           bounds=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    eps = cfg.epsilon
    x_adv = x
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        x_adv = _clip(x + _random_ball(rng, x.shape, eps), bounds)
    for _ in range(cfg.pgd_steps):
        g = loss_input_gradient(params, x_adv, y, task_mode)
        x_adv = x_adv + cfg.step_size * _unit_rows(g)
        x_adv = _clip(project_l2(x_adv, x, eps), bounds)
    return x_adv


def attack(params: ParamVector, x, y, cfg: AttackConfig, task_mode: str = "single-label",
           bounds=None) -> np.ndarray:
    if cfg.kind == "FGSM":
        return fgsm_l2(params, x, y, cfg.epsilon, task_mode, bounds)
    return pgd_l2(params, x, y, cfg, task_mode, bounds)


def evaluate_robustness(params: ParamVector, dataset_test: LabeledDataset, attack_cfg: AttackConfig,
                        ) -> tuple[MetricsReport, MetricsReport]:
    """Clean metrics, then metrics on test inputs attacked against this same model."""
    before = full_report(params, dataset_test)
    x_adv = attack(params, dataset_test.features, dataset_test.clean_labels, attack_cfg,
                   dataset_test.task_mode, dataset_test.bounds)
    after = full_report(params, replace(dataset_test, features=x_adv))
    return before, after


def robustness_record(attack_cfg: AttackConfig, before: MetricsReport, after: MetricsReport) -> dict:
    return {"attack": attack_cfg.kind, "epsilon": attack_cfg.epsilon, "norm": attack_cfg.norm,
            "steps": attack_cfg.pgd_steps if attack_cfg.kind == "PGD" else 1,
            "step_size": attack_cfg.step_size if attack_cfg.kind == "PGD" else attack_cfg.epsilon,
            "random_start": attack_cfg.random_start if attack_cfg.kind == "PGD" else False,
            "threat_model": "white-box, per evaluated model",
            "before": before.prf1(), "after": after.prf1()}
