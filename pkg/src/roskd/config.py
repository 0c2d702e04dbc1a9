"""Versioned JSON experiment configuration.

Unknown keys anywhere in the file are errors, so a typo in a hyperparameter
name can never silently fall back to a default.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class OptimConfig:
    momentum: float = 0.9
    weight_decay: float = 2e-4
    base_lr: float = 0.1
    decay_epochs: list = field(default_factory=lambda: [25, 40])
    decay_factor: float = 10.0


@dataclass
class DataConfig:
    n_classes: int = 8
    dim: int = 32
    per_class: int = 250
    separation: float = 3.0
    cluster_std: float = 1.0
    task_mode: str = "single-label"
    noise_rate: float = 0.3
    noise_kind: str = "symmetric"


@dataclass
class PartitionConfig:
    k: int = 5
    p: float = 0.4


@dataclass
class TeacherConfig:
    # hidden widths per teacher; input and output widths come from the data
    hidden: list = field(default_factory=lambda: [[64, 64], [48], [32, 32, 32], [64], [32, 32]])
    epochs: int = 50
    batch: int = 64
    optim: OptimConfig = field(default_factory=OptimConfig)
    # teacher used on its own by Baseline II (trained on the full training split)
    baseline_ii_teacher: int = 0


@dataclass
class StudentConfig:
    hidden: list = field(default_factory=lambda: [16])


@dataclass
class DistillSection:
    alpha: float = 0.9
    tau: float = 0.5
    sampler: str = "exponential"
    rate: float = 1.0
    averaging: bool = True
    warmup_epochs: int = 10
    epochs: int = 50
    batch: int = 64
    weight_granularity: str = "iteration"
    optim: OptimConfig = field(default_factory=OptimConfig)


@dataclass
class AttackSection:
    epsilon: float = 128 / 255
    pgd_steps: int = 10
    pgd_step_size: float | None = None
    random_start: bool = True


@dataclass
class LandscapeSection:
    n_points: int = 41
    extent: float = 1.0
    clamp: float = 8.0
    eval_batch: int = 256
    basin_factor: float = 2.0


@dataclass
class AblationSection:
    p_values: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    samplers: list = field(default_factory=lambda: ["exponential", "equal"])
    averaging: list = field(default_factory=lambda: [True, False])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    teachers: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    attack: AttackSection = field(default_factory=AttackSection)
    landscape: LandscapeSection = field(default_factory=LandscapeSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _build(type(current), value, sub) if is_dataclass(current) else value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return path
