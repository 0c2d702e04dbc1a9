"""Synthetic Gaussian-cluster datasets with injected label noise."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SINGLE = "single-label"
MULTI = "multi-label"
TASK_MODES = (SINGLE, MULTI)

# multi-label: class j is also active when its center is almost as close as the
# generating center, i.e. ||x-mu_j||^2 - ||x-mu_c||^2 <= 2 ln 2
MULTI_LABEL_MARGIN = 2.0 * np.log(2.0)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    n_classes: int
    task_mode: str = SINGLE
    noise_rate: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"unknown task mode {self.task_mode!r}")
        L = len(self.features)
        if L == 0:
            raise ValueError("dataset is empty")
        if len(self.clean_labels) != L or len(self.noisy_labels) != L:
            raise ValueError("labels and features disagree in length")
        if self.task_mode == SINGLE:
            for lab in (self.clean_labels, self.noisy_labels):
                if lab.ndim != 1 or lab.min() < 0 or lab.max() >= self.n_classes:
                    raise ValueError("single-label targets must be class indices < n_classes")
        else:
            for lab in (self.clean_labels, self.noisy_labels):
                if lab.shape != (L, self.n_classes):
                    raise ValueError("multi-label targets must be (L, C) bit masks")
        # immutable after construction
        for arr in (self.features, self.clean_labels, self.noisy_labels):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx], clean_labels=self.clean_labels[idx],
                       noisy_labels=self.noisy_labels[idx])

    def flip_fraction(self) -> float:
        """Fraction of flipped labels (of flipped bits in multi-label mode)."""
        return float(np.mean(self.clean_labels != self.noisy_labels))


def generate(n_classes: int, dim: int, per_class: int, separation: float, seed: int,
             task_mode: str = SINGLE, cluster_std: float = 1.0) -> LabeledDataset:
    """``n_classes`` isotropic Gaussian clusters.

    Centers are random unit directions scaled by ``separation``; samples are
    ordered by cluster and carry no noise yet (noisy == clean).
    """
    if n_classes < 2 or dim < 2 or per_class < 1:
        raise ValueError("need n_classes >= 2, dim >= 2, per_class >= 1")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if task_mode not in TASK_MODES:
        raise ValueError(f"unknown task mode {task_mode!r}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = separation * dirs
    ids = np.repeat(np.arange(n_classes), per_class)
    x = centers[ids] + cluster_std * rng.standard_normal((len(ids), dim))
    if task_mode == SINGLE:
        labels = ids.astype(np.int64)
    else:
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        own = d2[np.arange(len(ids)), ids][:, None]
        labels = (d2 - own <= MULTI_LABEL_MARGIN * cluster_std ** 2).astype(np.int8)
    meta = {"n_classes": n_classes, "dim": dim, "per_class": per_class, "separation": separation,
            "cluster_std": cluster_std, "seed": seed, "task_mode": task_mode}
    return LabeledDataset(x, labels, labels.copy(), n_classes, task_mode, 0.0, seed, meta)


def inject_noise(ds: LabeledDataset, eta: float, seed: int, kind: str = "symmetric",
                 transition: np.ndarray | None = None) -> LabeledDataset:
    """Return a copy whose noisy labels are flipped with probability ``eta``.

    ``kind="symmetric"`` moves a flipped single label to one of the other C-1
    classes uniformly; multi-label masks flip each bit independently.
    ``kind="asymmetric"`` (single-label only) sends a flipped label from class
    ``c`` to ``transition[c]``, defaulting to ``(c + 1) % C``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"noise rate must be in [0, 1], got {eta}")
    rng = np.random.default_rng(seed)
    clean = ds.clean_labels
    C = ds.n_classes
    if ds.task_mode == MULTI:
        if kind != "symmetric":
            raise ValueError("multi-label data supports symmetric bit-flip noise only")
        flips = rng.random(clean.shape) < eta
        noisy = np.where(flips, 1 - clean, clean).astype(clean.dtype)
    else:
        flip = rng.random(len(clean)) < eta
        if kind == "symmetric":
            offset = rng.integers(1, C, size=len(clean))
            target = (clean + offset) % C
        elif kind == "asymmetric":
            table = np.asarray(transition) if transition is not None else (np.arange(C) + 1) % C
            if np.any(table == np.arange(C)):
                raise ValueError("asymmetric transition must move every class")
            target = table[clean]
        else:
            raise ValueError(f"unknown noise kind {kind!r}")
        noisy = np.where(flip, target, clean).astype(clean.dtype)
    meta = dict(ds.meta, noise_rate=eta, noise_seed=seed, noise_kind=kind)
    return replace(ds, noisy_labels=noisy, noise_rate=eta, meta=meta)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("train", "val", "test")))


def train_val_test_split(n: int, seed: int, fractions=(0.7, 0.1, 0.2)) -> Split:
    """Disjoint shuffled index split, 70/10/20 by default."""
    if abs(sum(fractions) - 1.0) > 1e-12:
        raise ValueError("split fractions must sum to 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                 np.sort(perm[n_train + n_val:]))


def save_dataset(ds: LabeledDataset, path) -> tuple[Path, Path]:
    """CSV (features + labels) and a JSON sidecar ``<path>.json``."""
    path = Path(path)
    header = [f"feat_{j}" for j in range(ds.dim)]
    if ds.task_mode == SINGLE:
        header += ["clean", "noisy"]
    else:
        header += [f"clean_{j}" for j in range(ds.n_classes)] + [f"noisy_{j}" for j in range(ds.n_classes)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.features[i]]
            if ds.task_mode == SINGLE:
                row += [int(ds.clean_labels[i]), int(ds.noisy_labels[i])]
            else:
                row += [int(v) for v in ds.clean_labels[i]] + [int(v) for v in ds.noisy_labels[i]]
            w.writerow(row)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({
        "n_classes": ds.n_classes, "task_mode": ds.task_mode, "noise_rate": ds.noise_rate,
        "seed": ds.seed, "bounds": ds.bounds, "generation": ds.meta}, indent=2, sort_keys=True))
    return path, sidecar


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    C = side["n_classes"]
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    dim = sum(1 for h in header if h.startswith("feat_"))
    arr = np.array([[float(v) for v in r] for r in body])
    feats = arr[:, :dim]
    if side["task_mode"] == SINGLE:
        clean = arr[:, dim].astype(np.int64)
        noisy = arr[:, dim + 1].astype(np.int64)
    else:
        clean = arr[:, dim:dim + C].astype(np.int8)
        noisy = arr[:, dim + C:dim + 2 * C].astype(np.int8)
    bounds = tuple(side["bounds"]) if side.get("bounds") else None
    return LabeledDataset(feats, clean, noisy, C, side["task_mode"], side["noise_rate"], side["seed"],
                          side.get("generation", {}), bounds)
