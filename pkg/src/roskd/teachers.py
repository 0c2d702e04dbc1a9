"""Teacher training on partition subsets and ensemble logit serving."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .losses import cross_entropy
from .nn import ModelSpec, OptimState, ParamVector, backward, forward, init_model, sgd_step
from .partition import Partition
from .seeding import derive_rng


def batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch):
        yield perm[start:start + batch]


def accuracy(logits: np.ndarray, targets: np.ndarray, task_mode: str) -> float:
    if task_mode == "single-label":
        return float(np.mean(logits.argmax(axis=1) == targets))
    return float(np.mean((logits > 0) == (targets > 0)))


def train_teacher(spec: ModelSpec, dataset: LabeledDataset, subset_indices, opt_config: OptimState,
                  epochs: int = 50, batch: int = 64, seed: int = 0) -> tuple[ParamVector, list[dict]]:
    """Mini-batch SGD with cross-entropy on the noisy labels of one subset."""
    idx = np.asarray(subset_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("teacher subset is empty")
    part = dataset.subset(idx)
    x, y = part.features, part.noisy_labels
    params = init_model(spec)
    opt = opt_config.fresh()
    rng = derive_rng(seed, "teacher-batches")
    history = []
    for epoch in range(epochs):
        total = 0.0
        for b in batches(len(x), batch, rng):
            z = forward(params, x[b])
            loss, dz = cross_entropy(z, y[b], dataset.task_mode)
            params = sgd_step(params, backward(params, x[b], dz), opt, epoch)
            total += loss * len(b)
        history.append({"epoch": epoch, "train_loss": total / len(x),
                        "train_acc": accuracy(forward(params, x), y, dataset.task_mode)})
    return params, history


@dataclass(frozen=True)
class TeacherEnsemble:
    teachers: tuple[ParamVector, ...]
    subset_ids: tuple[int, ...]
    train_histories: tuple[list, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.teachers:
            raise ValueError("ensemble needs at least one teacher")
        for t in self.teachers:
            t.values.flags.writeable = False

    def __len__(self):
        return len(self.teachers)

    @property
    def specs(self) -> list[ModelSpec]:
        return [t.spec for t in self.teachers]

    def select(self, ids) -> "TeacherEnsemble":
        ids = list(ids)
        hist = tuple(self.train_histories[i] for i in ids) if self.train_histories else ()
        return TeacherEnsemble(tuple(self.teachers[i] for i in ids), tuple(self.subset_ids[i] for i in ids), hist)


def teacher_logits(ensemble: TeacherEnsemble, x) -> np.ndarray:
    """(K, L, C) raw logits of every teacher."""
    return np.stack([forward(t, x) for t in ensemble.teachers])


def _train_one(args):
    return train_teacher(*args)


def train_ensemble(specs: list[ModelSpec], dataset: LabeledDataset, partition: Partition,
                   opt_config: OptimState, epochs: int = 50, batch: int = 64, seed: int = 0,
                   jobs: int = 1) -> TeacherEnsemble:
    """Teacher ``i`` trains on ``partition.subsets[i]``; results are merged in subset order."""
    if len(specs) != len(partition.subsets):
        raise ValueError(f"{len(specs)} teacher specs for {len(partition.subsets)} subsets")
    tasks = [(spec, dataset, partition.subsets[i], opt_config, epochs, batch,
              int(derive_rng(seed, "teacher", i).integers(2**63)))
             for i, spec in enumerate(specs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]
    return TeacherEnsemble(tuple(r[0] for r in results), tuple(range(len(specs))),
                           tuple(r[1] for r in results))
