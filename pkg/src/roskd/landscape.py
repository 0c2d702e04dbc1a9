"""Two-dimensional loss slices along filter-normalized random directions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .losses import cross_entropy
from .nn import ParamVector, forward
from .seeding import derive_rng

CLAMP_VALUE = 8.0


@dataclass(frozen=True)
class GridSpec:
    n_points: int = 41
    extent: float = 1.0
    clamp_value: float = CLAMP_VALUE

    def coords(self) -> np.ndarray:
        # (i - c) / c is exactly antisymmetric around the centre, unlike linspace
        if self.n_points < 1:
            raise ValueError("grid needs at least one point")
        if self.n_points == 1:
            return np.zeros(1)
        c = (self.n_points - 1) / 2.0
        return (np.arange(self.n_points) - c) / c * self.extent


@dataclass(frozen=True, eq=False)
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray
    directions: tuple[ParamVector, ParamVector]
    base: ParamVector
    eval_batch_id: str
    clamp_value: float = CLAMP_VALUE
    seed: int | None = None

    @property
    def center_loss(self) -> float:
        return float(self.losses[len(self.alphas) // 2, len(self.betas) // 2])


def filter_normalize(direction: np.ndarray, base: ParamVector) -> ParamVector:
    """Rescale each weight row (one output unit) to the norm of the matching base row; zero the biases."""
    d = ParamVector(np.array(direction, dtype=np.float64), base.spec)
    for (Wd, bd), (Wb, _) in zip(d.layers(), base.layers()):
        dn = np.linalg.norm(Wd, axis=1, keepdims=True)
        bn = np.linalg.norm(Wb, axis=1, keepdims=True)
        Wd *= np.divide(bn, dn, out=np.zeros_like(dn), where=dn > 0)
        bd[:] = 0.0
    return d


def random_directions(base: ParamVector, seed: int) -> tuple[ParamVector, ParamVector]:
    d1 = derive_rng(seed, "landscape", 1).standard_normal(base.spec.n_params)
    d2 = derive_rng(seed, "landscape", 2).standard_normal(base.spec.n_params)
    return filter_normalize(d1, base), filter_normalize(d2, base)


def eval_loss(params: ParamVector, batch: LabeledDataset) -> float:
    loss, _ = cross_entropy(forward(params, batch.features), batch.clean_labels, batch.task_mode)
    return loss


def evaluate_grid(base: ParamVector, d1: ParamVector, d2: ParamVector, eval_batch: LabeledDataset,
                  grid_spec: GridSpec = GridSpec(), eval_batch_id: str = "", seed: int | None = None,
                  ) -> LandscapeGrid:
    for d in (d1, d2):
        if d.spec.layer_widths != base.spec.layer_widths:
            raise ValueError("direction and base parameters differ in architecture")
    alphas = grid_spec.coords()
    betas = grid_spec.coords()
    losses = np.empty((len(alphas), len(betas)))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            p = ParamVector(base.values + a * d1.values + b * d2.values, base.spec)
            losses[i, j] = eval_loss(p, eval_batch)
    losses = np.minimum(losses, grid_spec.clamp_value)
    return LandscapeGrid(alphas, betas, losses, (d1, d2), base, eval_batch_id, grid_spec.clamp_value, seed)


def basin_width(grid: LandscapeGrid, threshold: float) -> float:
    """Fraction of grid points whose (clamped) loss is <= ``threshold``."""
    if not np.isfinite(threshold) or threshold < 0 or threshold > grid.clamp_value:
        raise ValueError(f"threshold {threshold} outside [0, {grid.clamp_value}]")
    return float(np.mean(grid.losses <= threshold))


def save_grid(grid: LandscapeGrid, path) -> tuple[Path, Path]:
    """``alpha,beta,loss`` CSV plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "loss"])
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(grid.losses[i, j]))])
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"seed": grid.seed, "clamp": grid.clamp_value,
                                   "eval_batch_id": grid.eval_batch_id,
                                   "n_alpha": len(grid.alphas), "n_beta": len(grid.betas),
                                   "center_loss": grid.center_loss}, indent=2, sort_keys=True))
    return path, sidecar
