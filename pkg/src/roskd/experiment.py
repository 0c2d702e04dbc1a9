"""End-to-end runs: data, teacher ensembles, baselines, attacks, landscapes, sweeps.

All randomness for one run comes from a single root seed. Streams are derived
with ``derive_seed(root, <stage name>, ...)`` and do not depend on the overlap
ratio or the method, so every method in a run shares the same data, student
initialization and batch order, and teachers differ across overlap ratios only
through their training subsets.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .adversarial import AttackConfig, evaluate_robustness, robustness_record
from .config import ExperimentConfig, OptimConfig
from .data import LabeledDataset, Split, generate, inject_noise, train_val_test_split
from .distill import EQUAL, EXPONENTIAL, SINGLE_TEACHER, DistillConfig, run_distillation
from .landscape import GridSpec, LandscapeGrid, basin_width, evaluate_grid, random_directions
from .metrics import MetricsReport, full_report
from .nn import ModelSpec, OptimState, ParamVector
from .partition import Partition, PartitionSpec, make_partition
from .seeding import derive_seed
from .teachers import TeacherEnsemble, train_ensemble

METHODS = ("I", "II", "III", "V", "RoS-KD")
BASELINES = ("I", "II", "III", "V")


def optim_state(c: OptimConfig) -> OptimState:
    return OptimState(c.momentum, c.weight_decay, c.base_lr, tuple(c.decay_epochs), c.decay_factor)


@dataclass(frozen=True)
class StudentRecipe:
    """How a student is distilled: which teachers and which DistillConfig reductions."""
    name: str
    p: float | None
    sampler: str
    averaging: bool
    alpha: float | None = None
    teacher_ids: tuple[int, ...] | None = None
    use_smooth: bool = True

    @property
    def key(self) -> tuple:
        return (self.p, self.sampler, self.averaging, self.alpha, self.teacher_ids)


def method_recipe(method: str, cfg: ExperimentConfig) -> StudentRecipe:
    """Baseline I: student alone (alpha = 0). Baseline II: one teacher trained on
    the full training split. Baseline III: equal weights over teachers that all
    saw the full split (p = 1). Baseline V: stochastic weights on the overlapping
    subsets without averaging. RoS-KD: Baseline V plus parameter averaging."""
    p = cfg.partition.p
    d = cfg.distill
    if method == "I":
        return StudentRecipe("I", None, EQUAL, False, alpha=0.0)
    if method == "II":
        return StudentRecipe("II", 1.0, SINGLE_TEACHER, False, teacher_ids=(cfg.teachers.baseline_ii_teacher,))
    if method == "III":
        return StudentRecipe("III", 1.0, EQUAL, False)
    if method == "V":
        return StudentRecipe("V", p, d.sampler, False)
    if method == "RoS-KD":
        return StudentRecipe("RoS-KD", p, d.sampler, d.averaging)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def cell_recipe(p: float, sampler: str, averaging: bool) -> StudentRecipe:
    return StudentRecipe(f"p={p:g}/{sampler}/{'avg' if averaging else 'noavg'}", float(p), sampler, bool(averaging))


@dataclass
class StudentResult:
    recipe: StudentRecipe
    final: ParamVector
    smooth: ParamVector
    history: list
    checkpoints: list = field(default_factory=list, repr=False)

    @property
    def model(self) -> ParamVector:
        return self.smooth if self.recipe.use_smooth else self.final


class SeedRun:
    """Everything for one root seed, with memoized ensembles and students."""

    def __init__(self, cfg: ExperimentConfig, seed: int, jobs: int = 1, keep_checkpoints: bool = False):
        self.cfg = cfg
        self.seed = int(seed)
        self.jobs = jobs
        self.keep_checkpoints = keep_checkpoints
        self._ensembles: dict[float, TeacherEnsemble] = {}
        self._students: dict[tuple, StudentResult] = {}

    def s(self, *keys) -> int:
        return derive_seed(self.seed, *keys)

    @cached_property
    def dataset(self) -> LabeledDataset:
        d = self.cfg.data
        ds = generate(d.n_classes, d.dim, d.per_class, d.separation, self.s("data"), d.task_mode, d.cluster_std)
        return inject_noise(ds, d.noise_rate, self.s("noise"), d.noise_kind)

    @cached_property
    def split(self) -> Split:
        return train_val_test_split(len(self.dataset), self.s("split"))

    @cached_property
    def train(self) -> LabeledDataset:
        return self.dataset.subset(self.split.train)

    @cached_property
    def val(self) -> LabeledDataset:
        return self.dataset.subset(self.split.val)

    @cached_property
    def test(self) -> LabeledDataset:
        return self.dataset.subset(self.split.test)

    def teacher_specs(self) -> list[ModelSpec]:
        d = self.cfg.data
        return [ModelSpec((d.dim, *h, d.n_classes), self.s("teacher-init", i))
                for i, h in enumerate(self.cfg.teachers.hidden)]

    def student_spec(self) -> ModelSpec:
        d = self.cfg.data
        return ModelSpec((d.dim, *self.cfg.student.hidden, d.n_classes), self.s("student-init"))

    def partition(self, p: float) -> Partition:
        spec = PartitionSpec(len(self.cfg.teachers.hidden), float(p), self.s("partition"))
        return make_partition(len(self.train), spec)

    def ensemble(self, p: float, partition: Partition | None = None) -> TeacherEnsemble:
        p = float(p)
        if p not in self._ensembles:
            t = self.cfg.teachers
            partition = partition if partition is not None else self.partition(p)
            self._ensembles[p] = train_ensemble(self.teacher_specs(), self.train, partition,
                                                optim_state(t.optim), t.epochs, t.batch,
                                                self.s("teacher-train"), self.jobs)
        return self._ensembles[p]

    def set_ensemble(self, p: float, ensemble: TeacherEnsemble):
        self._ensembles[float(p)] = ensemble

    def distill_config(self, recipe: StudentRecipe) -> DistillConfig:
        d = self.cfg.distill
        return DistillConfig(
            alpha=d.alpha if recipe.alpha is None else recipe.alpha, tau=d.tau, sampler=recipe.sampler,
            rate=d.rate, single_teacher=0, averaging_enabled=recipe.averaging, warmup_epochs=d.warmup_epochs,
            epochs=d.epochs, batch=d.batch, seed=self.s("distill"), weight_granularity=d.weight_granularity,
            opt=optim_state(d.optim))

    def student(self, recipe: StudentRecipe) -> StudentResult:
        if recipe.key in self._students:
            r = self._students[recipe.key]
            return StudentResult(recipe, r.final, r.smooth, r.history, r.checkpoints)
        ensemble = None
        if recipe.alpha != 0.0:
            ensemble = self.ensemble(recipe.p)
            if recipe.teacher_ids is not None:
                ensemble = ensemble.select(recipe.teacher_ids)
        checkpoints = []
        hook = (lambda epoch, params: checkpoints.append((epoch, params.copy()))) if self.keep_checkpoints else None
        M, M_smooth, history = run_distillation(self.student_spec(), self.train, ensemble,
                                                self.distill_config(recipe), self.val, hook)
        result = StudentResult(recipe, M, M_smooth, history, checkpoints)
        self._students[recipe.key] = result
        return result

    def method(self, name: str) -> StudentResult:
        return self.student(method_recipe(name, self.cfg))

    def attack_config(self, kind: str = "PGD") -> AttackConfig:
        a = self.cfg.attack
        return AttackConfig(kind, "l2", a.epsilon, a.pgd_steps, a.pgd_step_size, a.random_start, self.s("attack"))

    def robustness(self, model: ParamVector, kind: str = "PGD") -> tuple[MetricsReport, MetricsReport]:
        return evaluate_robustness(model, self.test, self.attack_config(kind))

    @cached_property
    def eval_batch_ids(self) -> np.ndarray:
        n = min(self.cfg.landscape.eval_batch, len(self.test))
        rng = np.random.default_rng(self.s("landscape-batch"))
        return np.sort(rng.choice(len(self.test), size=n, replace=False))

    def landscape(self, model: ParamVector) -> LandscapeGrid:
        ls = self.cfg.landscape
        d1, d2 = random_directions(model, self.s("landscape"))
        batch = self.test.subset(self.eval_batch_ids)
        batch_id = f"seed{self.seed}-test-{len(self.eval_batch_ids)}"
        return evaluate_grid(model, d1, d2, batch, GridSpec(ls.n_points, ls.extent, ls.clamp), batch_id,
                             self.s("landscape"))

    def basin(self, grid: LandscapeGrid) -> float:
        threshold = min(self.cfg.landscape.basin_factor * float(grid.losses.min()), grid.clamp_value)
        return basin_width(grid, threshold)


def evaluate_student(run: SeedRun, result: StudentResult, attacks=("PGD", "FGSM"), landscape: bool = False) -> dict:
    model = result.model
    rep = full_report(model, run.test)
    row = {"method": result.recipe.name, "seed": run.seed, "precision": rep.precision, "recall": rep.recall,
           "f1": rep.f1, "auc": rep.mean_auc}
    for kind in attacks:
        before, after = run.robustness(model, kind)
        row[f"{kind.lower()}_before_f1"] = before.f1
        row[f"{kind.lower()}_after_f1"] = after.f1
        row[f"{kind.lower()}_after_precision"] = after.precision
        row[f"{kind.lower()}_after_recall"] = after.recall
    if landscape:
        grid = run.landscape(model)
        row["basin_width"] = run.basin(grid)
        row["landscape_center_loss"] = grid.center_loss
    return row


def method_table(cfg: ExperimentConfig, seeds, methods=METHODS, jobs: int = 1, landscape: bool = True) -> list[dict]:
    """One row per (method, seed) with clean, attacked and landscape metrics."""
    rows = []
    for seed in seeds:
        run = SeedRun(cfg, seed, jobs)
        for m in methods:
            rows.append(evaluate_student(run, run.method(m), landscape=landscape))
    return rows


def overlap_sweep(cfg: ExperimentConfig, seeds, p_values, jobs: int = 1) -> list[dict]:
    """RoS-KD student F1 per overlap ratio, plus the Baseline III reference."""
    rows = []
    for seed in seeds:
        run = SeedRun(cfg, seed, jobs)
        for p in p_values:
            recipe = replace(method_recipe("RoS-KD", cfg), name=f"RoS-KD p={p:g}", p=float(p))
            row = evaluate_student(run, run.student(recipe), attacks=())
            row["p"] = float(p)
            rows.append(row)
        row = evaluate_student(run, run.method("III"), attacks=())
        row["p"] = None
        rows.append(row)
    return rows


def ablation(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Rows per (cell, seed); a cell that raises is recorded as failed and the sweep continues."""
    ab = cfg.ablation
    rows = []
    for seed in ab.seeds:
        run = SeedRun(cfg, seed, jobs)
        for p in ab.p_values:
            for sampler in ab.samplers:
                for averaging in ab.averaging:
                    recipe = cell_recipe(p, sampler, averaging)
                    base = {"p": float(p), "sampler": sampler, "averaging": bool(averaging), "seed": seed}
                    try:
                        r = evaluate_student(run, run.student(recipe), attacks=("PGD",))
                        rows.append({**base, "status": "ok", "precision": r["precision"], "recall": r["recall"],
                                     "f1": r["f1"], "auc": r["auc"], "robust_f1": r["pgd_after_f1"]})
                    except Exception as exc:  # noqa: BLE001 - partial failures are reported, not fatal
                        rows.append({**base, "status": f"failed: {exc}"})
    return rows


METRIC_KEYS = ("precision", "recall", "f1", "auc", "robust_f1")


def aggregate(rows: list[dict], group_keys: tuple[str, ...], metric_keys=METRIC_KEYS) -> list[dict]:
    """Mean and population std per group over successful rows."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("status", "ok") != "ok":
            continue
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for key, members in groups.items():
        agg = dict(zip(group_keys, key))
        agg["n_seeds"] = len(members)
        for m in metric_keys:
            vals = [r[m] for r in members if r.get(m) is not None]
            if vals:
                agg[f"{m}_mean"] = float(np.mean(vals))
                agg[f"{m}_std"] = float(np.std(vals))
        out.append(agg)
    return out


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
