"""Command-line pipeline: ``roskd <stage> [--config PATH] [--seed N] [--out DIR]``.

Each stage reads its inputs from the run directory ``<out>/<config hash>-s<seed>``,
writes its artifacts there and records their SHA-256 in ``manifest.json``.
``roskd replay manifest.json`` re-executes the recorded stages in a fresh
directory and checks every artifact is byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from .adversarial import robustness_record
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, save_config
from .data import Split, load_dataset, save_dataset
from .experiment import (BASELINES, METHODS, SeedRun, ablation, aggregate, method_recipe, overlap_sweep)
from .landscape import save_grid
from .manifest import Manifest, sha256_file
from .metrics import full_report
from .nn import load_checkpoint, save_checkpoint
from .partition import load_partition, overlap_stats, save_partition
from .teachers import TeacherEnsemble

log = logging.getLogger("roskd")


class DependencyMissing(RuntimeError):
    def __init__(self, stage: str, path: Path):
        super().__init__(f"dependency missing: run stage '{stage}' first ({path} not found)")


@dataclass
class Context:
    cfg: ExperimentConfig
    seed: int
    jobs: int
    run_dir: Path
    manifest: Manifest

    def path(self, *parts) -> Path:
        p = self.run_dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, stage: str, *parts) -> Path:
        p = self.run_dir.joinpath(*parts)
        if not p.exists():
            raise DependencyMissing(stage, p)
        return p


def _p_tag(p: float) -> str:
    return f"p{float(p):g}"


def _teacher_ps(cfg: ExperimentConfig) -> list[float]:
    return sorted({float(cfg.partition.p), 1.0})


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return path


def _write_csv(path: Path, rows: list[dict]) -> Path:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
    return path


def _load_run(ctx: Context) -> SeedRun:
    """SeedRun backed by the dataset and split stored in the run directory."""
    run = SeedRun(ctx.cfg, ctx.seed, ctx.jobs)
    run.dataset = load_dataset(ctx.need("gen", "data", "dataset.csv"))
    run.split = Split.from_dict(json.loads(ctx.need("gen", "data", "split.json").read_text()))
    return run


def _load_ensemble(ctx: Context, p: float) -> TeacherEnsemble:
    k = len(ctx.cfg.teachers.hidden)
    params = [load_checkpoint(ctx.need("train-teachers", "teachers", _p_tag(p), f"teacher_{i}.ckpt"))[0]
              for i in range(k)]
    return TeacherEnsemble(tuple(params), tuple(range(k)))


def _students_present(ctx: Context, only: str | None) -> list[str]:
    methods = [only] if only else [m for m in METHODS if (ctx.run_dir / "students" / m / "M_smooth.ckpt").exists()]
    if not methods or (only and not (ctx.run_dir / "students" / only / "M_smooth.ckpt").exists()):
        raise DependencyMissing("distill", ctx.run_dir / "students" / (only or "<method>") / "M_smooth.ckpt")
    return methods


def _student_model(ctx: Context, method: str):
    recipe = method_recipe(method, ctx.cfg)
    name = "M_smooth.ckpt" if recipe.use_smooth else "M.ckpt"
    return load_checkpoint(ctx.need("distill", "students", method, name))[0]


def cmd_gen(ctx: Context, args) -> list[Path]:
    run = SeedRun(ctx.cfg, ctx.seed)
    csv_path, sidecar = save_dataset(run.dataset, ctx.path("data", "dataset.csv"))
    split = _write_json(ctx.path("data", "split.json"), run.split.to_dict())
    log.info("dataset: %d samples, flip fraction %.3f", len(run.dataset), run.dataset.flip_fraction())
    return [csv_path, sidecar, split]


def _parse_sweep(text: str) -> list[float]:
    key, _, values = text.partition("=")
    if key.strip() != "p" or not values:
        raise ConfigError(f"--sweep expects p=v1,v2,... (got {text!r})")
    return [float(v) for v in values.split(",")]


def cmd_partition(ctx: Context, args) -> list[Path]:
    run = _load_run(ctx)
    out = []
    stats = {}
    for p in _teacher_ps(ctx.cfg):
        part = run.partition(p)
        out.append(save_partition(part, ctx.path("partition", f"partition_{_p_tag(p)}.json")))
        jac, cov = overlap_stats(part)
        stats[_p_tag(p)] = {"subset_sizes": [len(s) for s in part.subsets], "jaccard": jac.tolist(),
                            "min_coverage": int(cov.min()), "mean_coverage": float(cov.mean())}
    out.append(_write_json(ctx.path("partition", "overlap_stats.json"), stats))
    if args.sweep:
        p_values = _parse_sweep(args.sweep)
        rows = overlap_sweep(ctx.cfg, ctx.cfg.ablation.seeds, p_values, ctx.jobs)
        for r in rows:
            r["row_type"] = "seed"
        agg = aggregate(rows, ("method", "p"), ("precision", "recall", "f1", "auc"))
        for a in agg:
            a["row_type"] = "mean_std"
        out.append(_write_csv(ctx.path("reports", "overlap_sweep.csv"), rows + agg))
        for a in agg:
            log.info("%-14s F1 %.4f +- %.4f", a["method"], a["f1_mean"], a["f1_std"])
    return out


def cmd_train_teachers(ctx: Context, args) -> list[Path]:
    run = _load_run(ctx)
    out = []
    for p in _teacher_ps(ctx.cfg):
        part = load_partition(ctx.need("partition", "partition", f"partition_{_p_tag(p)}.json"))
        ens = run.ensemble(p, part)
        for i, params in enumerate(ens.teachers):
            out.append(save_checkpoint(ctx.path("teachers", _p_tag(p), f"teacher_{i}.ckpt"), params,
                                       run_id=f"{ctx.run_dir.name}/teachers/{_p_tag(p)}/{i}"))
        out.append(_write_json(ctx.path("teachers", _p_tag(p), "history.json"),
                               [list(h) for h in ens.train_histories]))
    return out


def _distill_one(ctx: Context, run: SeedRun, method: str) -> list[Path]:
    recipe = method_recipe(method, ctx.cfg)
    if recipe.alpha != 0.0:
        run.set_ensemble(recipe.p, _load_ensemble(ctx, recipe.p))
    res = run.student(recipe)
    run_id = f"{ctx.run_dir.name}/students/{method}"
    out = [save_checkpoint(ctx.path("students", method, "M.ckpt"), res.final, run_id),
           save_checkpoint(ctx.path("students", method, "M_smooth.ckpt"), res.smooth, run_id)]
    hist = ctx.path("students", method, "history.jsonl")
    hist.write_text("".join(json.dumps(h, sort_keys=True) + "\n" for h in res.history))
    out.append(hist)
    out.append(_write_json(ctx.path("students", method, "distill_config.json"),
                           {"method": method, **run.distill_config(recipe).to_dict(),
                            "weight_normalization": "exponential draws renormalized to sum 1",
                            "teacher_p": recipe.p, "teacher_ids": recipe.teacher_ids}))
    return out


def cmd_distill(ctx: Context, args) -> list[Path]:
    run = _load_run(ctx)
    methods = METHODS if args.all else [args.baseline or "RoS-KD"]
    out = []
    for m in methods:
        out += _distill_one(ctx, run, m)
    return out


def cmd_attack(ctx: Context, args) -> list[Path]:
    run = _load_run(ctx)
    out = []
    for method in _students_present(ctx, args.method):
        model = _student_model(ctx, method)
        records = []
        for kind in ("PGD", "FGSM"):
            before, after = run.robustness(model, kind)
            records.append({"method": method, **robustness_record(run.attack_config(kind), before, after)})
        out.append(_write_json(ctx.path("reports", f"robustness_{method}.json"), records))
    return out


def cmd_landscape(ctx: Context, args) -> list[Path]:
    run = _load_run(ctx)
    out = []
    for method in _students_present(ctx, args.method):
        grid = run.landscape(_student_model(ctx, method))
        out += save_grid(grid, ctx.path("reports", f"landscape_{method}.csv"))
        threshold = min(ctx.cfg.landscape.basin_factor * float(grid.losses.min()), grid.clamp_value)
        out.append(_write_json(ctx.path("reports", f"basin_{method}.json"),
                               {"method": method, "threshold": threshold, "basin_width": run.basin(grid),
                                "min_loss": float(grid.losses.min()), "center_loss": grid.center_loss}))
    return out


def cmd_report(ctx: Context, args) -> list[Path]:
    run = _load_run(ctx)
    rows, auc_rows = [], []
    for method in _students_present(ctx, None):
        rep = full_report(_student_model(ctx, method), run.test)
        rows.append({"method": method, "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
                     "mean_auc": rep.mean_auc, "averaging": rep.averaging, "n_test": rep.n_samples})
        auc_rows.append({"method": method, **{f"class_{j}": a for j, a in enumerate(rep.per_class_auc)},
                         "mean": rep.mean_auc})
    out = [_write_json(ctx.path("reports", "table1.json"), rows),
           _write_csv(ctx.path("reports", "table1.csv"), rows),
           _write_csv(ctx.path("reports", "per_class_auc.csv"), auc_rows)]
    robust = []
    for method in [r["method"] for r in rows]:
        path = ctx.run_dir / "reports" / f"robustness_{method}.json"
        if path.exists():
            for rec in json.loads(path.read_text()):
                robust.append({"method": method, "attack": rec["attack"], "epsilon": rec["epsilon"],
                               **{f"before_{k}": v for k, v in rec["before"].items()},
                               **{f"after_{k}": v for k, v in rec["after"].items()}})
    if robust:
        out.append(_write_csv(ctx.path("reports", "table2.csv"), robust))
    for r in rows:
        log.info("%-7s P %.4f R %.4f F1 %.4f AUC %.4f", r["method"], r["precision"], r["recall"], r["f1"],
                 r["mean_auc"] or float("nan"))
    return out


def cmd_ablation(ctx: Context, args) -> list[Path]:
    rows = ablation(ctx.cfg, ctx.jobs)
    for r in rows:
        r["row_type"] = "seed"
    agg = aggregate(rows, ("p", "sampler", "averaging"))
    for a in agg:
        a["row_type"] = "mean_std"
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        log.warning("%d ablation cell(s) failed", len(failed))
    return [_write_csv(ctx.path("reports", "ablation.csv"), rows + agg)]


def cmd_run_all(ctx: Context, args) -> list[Path]:
    steps = [("gen", cmd_gen, {}), ("partition", cmd_partition, {"sweep": None}),
             ("train-teachers", cmd_train_teachers, {}), ("distill", cmd_distill, {"all": True, "baseline": None}),
             ("attack", cmd_attack, {"method": None}), ("landscape", cmd_landscape, {"method": None}),
             ("report", cmd_report, {})]
    out = []
    for name, fn, extra in steps:
        t0 = time.perf_counter()
        produced = fn(ctx, argparse.Namespace(**extra))
        log.info("stage %s done in %.1fs", name, time.perf_counter() - t0)
        out += produced
    return out


COMMANDS = {
    "gen": cmd_gen, "partition": cmd_partition, "train-teachers": cmd_train_teachers, "distill": cmd_distill,
    "attack": cmd_attack, "landscape": cmd_landscape, "report": cmd_report, "ablation": cmd_ablation,
    "run-all": cmd_run_all,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON (defaults if omitted)")
    common.add_argument("--seed", type=int, default=0, help="root seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel teacher training processes")
    common.add_argument("--out", type=Path, help="output root (default $ROSKD_OUT, else ./runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="roskd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the noisy dataset and 70/10/20 split")
    p = sub.add_parser("partition", parents=[common], help="build overlapping teacher subsets")
    p.add_argument("--sweep", help="overlap ablation, e.g. p=0,0.2,0.4,0.6,0.8,1.0")
    sub.add_parser("train-teachers", parents=[common], help="train the teacher ensembles")
    p = sub.add_parser("distill", parents=[common], help="distill a student (RoS-KD unless --baseline)")
    p.add_argument("--baseline", choices=BASELINES)
    p.add_argument("--all", action="store_true", help="RoS-KD and every baseline")
    p = sub.add_parser("attack", parents=[common], help="PGD/FGSM robustness of distilled students")
    p.add_argument("--method", choices=METHODS)
    p = sub.add_parser("landscape", parents=[common], help="2D loss landscape of distilled students")
    p.add_argument("--method", choices=METHODS)
    sub.add_parser("report", parents=[common], help="precision/recall/F1/AUC tables")
    sub.add_parser("ablation", parents=[common], help="(p, sampler, averaging) sweep over seeds")
    sub.add_parser("run-all", parents=[common], help="every stage for every method")
    p = sub.add_parser("replay", help="re-run a manifest and verify artifacts are byte-identical")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="where to replay (temporary directory if omitted)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _stage_argv(command: str, args) -> list[str]:
    argv = []
    if command == "partition" and args.sweep:
        argv += ["--sweep", args.sweep]
    if command == "distill":
        if args.all:
            argv.append("--all")
        elif args.baseline:
            argv += ["--baseline", args.baseline]
    if command in ("attack", "landscape") and args.method:
        argv += ["--method", args.method]
    return argv


def _stage_key(command: str, argv: list[str]) -> str:
    return " ".join([command, *argv])


def run_command(args) -> Path:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    out_root = Path(args.out or os.environ.get("ROSKD_OUT") or "runs")
    run_dir = out_root / f"{cfg.config_hash()}-s{args.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.json")
    manifest = Manifest.open(run_dir, cfg.config_hash(), args.seed, cfg.to_dict())
    ctx = Context(cfg, args.seed, max(1, args.jobs), run_dir, manifest)
    t0 = time.perf_counter()
    artifacts = COMMANDS[args.command](ctx, args)
    argv = _stage_argv(args.command, args)
    manifest.record(_stage_key(args.command, argv), {"command": args.command, "argv": argv},
                    artifacts, time.perf_counter() - t0)
    log.info("%s: %d artifact(s) in %s", args.command, len(artifacts), run_dir)
    return run_dir


def replay(manifest_path: Path, out: Path | None = None) -> tuple[bool, list[str]]:
    """Re-execute every recorded stage; returns (all identical, list of mismatching paths)."""
    original = Manifest.load(manifest_path)
    cfg = config_from_dict(original.data["config"])
    seed = original.data["root_seed"]
    work = Path(out) if out else Path(tempfile.mkdtemp(prefix="roskd-replay-"))
    cfg_path = work / "replay_config.json"
    work.mkdir(parents=True, exist_ok=True)
    save_config(cfg, cfg_path)
    run_dir = None
    for stage in original.data["stages"].values():
        argv = [stage["args"]["command"], *stage["args"]["argv"], "--config", str(cfg_path),
                "--seed", str(seed), "--out", str(work)]
        ns = build_parser().parse_args(argv)
        run_dir = run_command(ns)
    mismatches = []
    for rel, digest in original.artifacts().items():
        path = run_dir / rel
        if not path.exists() or sha256_file(path) != digest:
            mismatches.append(rel)
    return not mismatches, mismatches


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            ok, bad = replay(args.manifest, args.out)
            if not ok:
                print(f"replay mismatch in {len(bad)} artifact(s): {', '.join(bad)}", file=sys.stderr)
                return 1
            print("replay ok: all artifacts identical")
            return 0
        run_dir = run_command(args)
        print(run_dir)
        return 0
    except (DependencyMissing, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
