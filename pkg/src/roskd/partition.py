"""Overlapping training subsets for the teacher ensemble.

Indices are shuffled and cut into ``k`` near-equal disjoint core blocks.
Subset ``i`` is its core block plus ``round(p * (L - |B_i|))`` indices sampled
without replacement from the complement of that block. ``p = 0`` gives the
disjoint cores, ``p = 1`` gives every subset the full training set, and the
union always covers every index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import derive_rng


@dataclass(frozen=True)
class PartitionSpec:
    k: int = 5
    p: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("overlap ratio p must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class Partition:
    spec: PartitionSpec
    train_size: int
    subsets: tuple[np.ndarray, ...]
    core_blocks: tuple[np.ndarray, ...]

    def to_dict(self) -> dict:
        return {"k": self.spec.k, "p": self.spec.p, "seed": self.spec.seed, "train_size": self.train_size,
                "core_blocks": [b.tolist() for b in self.core_blocks],
                "subsets": [s.tolist() for s in self.subsets]}

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        spec = PartitionSpec(int(d["k"]), float(d["p"]), int(d["seed"]))
        return cls(spec, int(d["train_size"]),
                   tuple(np.asarray(s, dtype=np.int64) for s in d["subsets"]),
                   tuple(np.asarray(b, dtype=np.int64) for b in d["core_blocks"]))


def make_partition(train_size: int, spec: PartitionSpec) -> Partition:
    if train_size < spec.k:
        raise ValueError(f"cannot split {train_size} samples into {spec.k} subsets")
    perm = derive_rng(spec.seed, "partition", "cores").permutation(train_size)
    cores = tuple(np.sort(b) for b in np.array_split(perm, spec.k))
    subsets = []
    for i, core in enumerate(cores):
        rest = np.setdiff1d(np.arange(train_size), core, assume_unique=True)
        n_extra = int(round(spec.p * len(rest)))
        extra = derive_rng(spec.seed, "partition", "overlap", i).choice(rest, size=n_extra, replace=False)
        subsets.append(np.sort(np.concatenate([core, extra]).astype(np.int64)))
    return Partition(spec, train_size, tuple(subsets), cores)


def overlap_stats(partition: Partition) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Jaccard matrix (k x k) and per-sample subset membership counts."""
    k = len(partition.subsets)
    member = np.zeros((k, partition.train_size), dtype=bool)
    for i, s in enumerate(partition.subsets):
        member[i, s] = True
    inter = member.astype(np.int64) @ member.T.astype(np.int64)
    sizes = np.diag(inter)
    union = sizes[:, None] + sizes[None, :] - inter
    jaccard = inter / union
    return jaccard, member.sum(axis=0)


def save_partition(partition: Partition, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(partition.to_dict()))
    return path


def load_partition(path) -> Partition:
    return Partition.from_dict(json.loads(Path(path).read_text()))
