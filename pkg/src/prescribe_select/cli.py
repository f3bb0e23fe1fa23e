"""Reproducible experiment runner: generate data, train and evaluate the
policy library plus the selector, and summarize results, all from one YAML
config.

Every artifact is a pure function of the config and the master seed: workers
regenerate datasets deterministically instead of shipping them around, so
scheduling order never affects outputs and interrupted runs resume without
duplicating result rows.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import INDEX_BASE, Dataset, SeedSpec, make_folds, write_dataset_csv
from .datagen import gen_newsvendor, gen_shipment
from .evaluate import student_t_ci
from .pipeline import MetaPolicy, PsEnsemble, _fold_work, save_ensemble
from .policies import (
    LIBRARY_ORDER,
    PolicyKind,
    PredictorParams,
    fit_library,
    policy_from_state,
    policy_to_state,
)
from .policytree import TreeHyperparams, tree_from_text, tree_to_dot, tree_to_text
from .problems import NewsvendorProblem, ShipmentProblem, ShipmentSpec


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str
    output_dir: str
    master_seed: int = 20240101
    train_sizes: list = field(default_factory=lambda: [250])
    samples: int = 1
    test_horizon: int = 2000
    folds: int = 5
    repetitions: int = 10
    policies: list = field(default_factory=lambda: [k.value for k in LIBRARY_ORDER])
    predictor: PredictorParams = field(default_factory=PredictorParams)
    tree: TreeHyperparams = field(default_factory=TreeHyperparams)
    tune_tree_penalty: bool = False
    jobs: int = 0
    dump_trees: bool = False
    segments: bool = True
    save_ensembles: bool = False

    def validate(self):
        if self.problem not in ("newsvendor", "shipment"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        counts = [self.samples, self.test_horizon, self.folds, self.repetitions]
        if any(c < 1 for c in counts):
            raise ConfigError("samples, test_horizon, folds, repetitions must be positive")
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")
        min_n = 2 * self.folds * self.predictor.rf_min_leaf
        for n in self.train_sizes:
            if n < min_n:
                raise ConfigError(f"train size {n} below minimum viable {min_n}")
        try:
            self.kinds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def kinds(self):
        return [PolicyKind.from_name(name) for name in self.policies]

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "train_sizes": list(self.train_sizes),
            "samples": self.samples,
            "test_horizon": self.test_horizon,
            "folds": self.folds,
            "repetitions": self.repetitions,
            "policies": list(self.policies),
            "predictor": vars(self.predictor).copy(),
            "tree": vars(self.tree).copy(),
            "tune_tree_penalty": self.tune_tree_penalty,
            "jobs": self.jobs,
            "dump_trees": self.dump_trees,
            "segments": self.segments,
            "save_ensembles": self.save_ensembles,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        for required in ("problem", "output_dir"):
            if required not in raw:
                raise ConfigError(f"config is missing {required!r}")
        pred = PredictorParams(**raw.pop("predictor", {}))
        tree = TreeHyperparams(**raw.pop("tree", {}))
        known = {f for f in cls.__dataclass_fields__ if f not in ("predictor", "tree")}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(predictor=pred, tree=tree, **raw).validate()


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Deterministic data/problem construction shared by parent and workers
# ---------------------------------------------------------------------------

def build_problem(cfg: ExperimentConfig):
    if cfg.problem == "newsvendor":
        return NewsvendorProblem()
    spec = ShipmentSpec.with_drawn_costs(seed=SeedSpec(cfg.master_seed).derive("xi"))
    return ShipmentProblem(spec)


def _generate(cfg: ExperimentConfig, t_count: int, seed: int) -> Dataset:
    if cfg.problem == "newsvendor":
        return gen_newsvendor(t_count, seed=seed)
    return gen_shipment(t_count, seed=seed)


def train_data(cfg: ExperimentConfig, n: int, s: int) -> Dataset:
    return _generate(cfg, n, SeedSpec(cfg.master_seed).derive("data-train", n, s))


def test_data(cfg: ExperimentConfig) -> Dataset:
    return _generate(cfg, cfg.test_horizon, SeedSpec(cfg.master_seed).derive("data-test"))


def cell_seed(cfg: ExperimentConfig, n: int, s: int) -> int:
    return SeedSpec(cfg.master_seed).derive("cell", n, s)


# ---------------------------------------------------------------------------
# Worker tasks (top-level for pickling); each regenerates its data
# ---------------------------------------------------------------------------

def _task_fold(payload):
    cfg = ExperimentConfig.from_dict(payload["config"])
    n, s, k = payload["n"], payload["s"], payload["k"]
    train = train_data(cfg, n, s)
    problem = build_problem(cfg)
    seeds = SeedSpec(cell_seed(cfg, n, s))
    folds = make_folds(train.n_rows, cfg.folds, seeds.generator("folds"))
    _, fold_trees, fit_rows = _fold_work(
        train, problem, cfg.kinds(), folds, k, cfg.repetitions,
        cfg.tree, cfg.predictor, seeds, tune_penalty=cfg.tune_tree_penalty)
    return {
        "n": n, "s": s, "k": k,
        "trees": [tree_to_text(t) for t in fold_trees],
        "fold_rows": folds.fold(k),
        "fit_rows": fit_rows,
    }


def _task_refit(payload):
    cfg = ExperimentConfig.from_dict(payload["config"])
    n, s = payload["n"], payload["s"]
    train = train_data(cfg, n, s)
    problem = build_problem(cfg)
    seeds = SeedSpec(cell_seed(cfg, n, s))
    policies = fit_library(cfg.kinds(), train, problem, cfg.predictor, seeds.derive("fit", -1))
    return {"n": n, "s": s, "policies": [policy_to_state(p) for p in policies]}


def _task_eval(payload):
    cfg = ExperimentConfig.from_dict(payload["config"])
    n, s = payload["n"], payload["s"]
    lo, hi = payload["chunk"]
    problem = build_problem(cfg)
    test = test_data(cfg).subset(np.arange(lo, hi))
    ens = _ensemble_from_parts(cfg, n, s, payload["trees"], payload["policies"], problem)
    out = {"n": n, "s": s, "chunk": (lo, hi), "costs": {}, "units": {}}
    for kind, policy in zip(ens.kinds, ens.refit_policies):
        Z = policy.prescribe_many(test.X)
        for i in range(test.n_rows):
            problem.check_feasible(Z[i])
        out["costs"][kind.value] = problem.cost_rows(Z, test.Y)
        out["units"][kind.value] = problem.unit_profits_rows(Z, test.Y)
    meta = MetaPolicy(ens)
    Z = meta.prescribe_many(test.X, row_ids=np.arange(lo, hi))
    for i in range(test.n_rows):
        problem.check_feasible(Z[i])
    out["costs"]["PS"] = problem.cost_rows(Z, test.Y)
    out["units"]["PS"] = problem.unit_profits_rows(Z, test.Y)
    return out


def _ensemble_from_parts(cfg, n, s, tree_texts, policy_states, problem) -> PsEnsemble:
    return PsEnsemble(
        trees=[tree_from_text(t) for t in tree_texts],
        refit_policies=[policy_from_state(st, problem) for st in policy_states],
        kinds=tuple(cfg.kinds()),
        n_folds=cfg.folds,
        n_repeats=cfg.repetitions,
        master_seed=cell_seed(cfg, n, s),
    )


_TASKS = {"fold": _task_fold, "refit": _task_refit, "eval": _task_eval}


def _task_dispatch(payload):
    """Run one worker task, capturing failures as data so a broken cell is
    recorded and skipped while the rest of the run continues."""
    try:
        result = _TASKS[payload["task"]](payload)
        return {"ok": True, "n": payload["n"], "s": payload["s"], "result": result}
    except Exception as exc:  # noqa: BLE001 - converted into an error row
        return {
            "ok": False, "n": payload["n"], "s": payload["s"],
            "error": f"{payload['task']}: {exc!r}",
        }


def _run_tasks(payloads, pool):
    if pool is None:
        return [_task_dispatch(p) for p in payloads]
    return list(pool.map(_task_dispatch, payloads, chunksize=1))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_gen(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "index_base": INDEX_BASE,
        "files": {},
    }
    spec = SeedSpec(cfg.master_seed)
    for n in cfg.train_sizes:
        for s in range(cfg.samples):
            path = out / f"train_N{n}_s{s}.csv"
            write_dataset_csv(train_data(cfg, n, s), path, include_segments=cfg.segments)
            manifest["files"][path.name] = {"seed": spec.derive("data-train", n, s), "rows": n}
    test_path = out / "test.csv"
    write_dataset_csv(test_data(cfg), test_path, include_segments=cfg.segments)
    manifest["files"][test_path.name] = {"seed": spec.derive("data-test"), "rows": cfg.test_horizon}
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))
    print(f"wrote {len(manifest['files'])} dataset files to {out}")
    return 0


RESULT_COLUMNS = ("problem", "N", "sample", "policy", "mean_cost", "mean_profit",
                  "segment", "segment_mean_profit")


def _read_results(path: Path):
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _segment_stats(units: np.ndarray, segments) -> dict:
    stats = {}
    if segments is not None:
        seg = segments if segments.ndim == 2 else segments[:, None]
        for label in sorted(set(seg.ravel().tolist())):
            mask = seg == label
            stats[label] = float(units[mask].mean())
    return stats


def cmd_run(cfg: ExperimentConfig, jobs: int | None = None) -> int:
    jobs = jobs if jobs is not None else cfg.jobs
    if jobs <= 0:
        jobs = os.cpu_count() or 1
    results_dir = Path(cfg.output_dir) / "results"
    results_dir.mkdir(parents=True, exist_ok=True)
    results_path = results_dir / "results.csv"
    errors_path = results_dir / "errors.csv"

    policy_names = [k.value for k in cfg.kinds()] + ["PS"]
    existing = _read_results(results_path)
    complete = {}
    for r in existing:
        if r["segment"] == "all":
            key = (int(r["N"]), int(r["sample"]))
            complete[key] = complete.get(key, 0) + 1
    done_cells = {key for key, cnt in complete.items() if cnt >= len(policy_names)}
    existing = [r for r in existing if (int(r["N"]), int(r["sample"])) in done_cells]
    cells = [(n, s) for n in cfg.train_sizes for s in range(cfg.samples)
             if (n, s) not in done_cells]
    if done_cells:
        print(f"resuming: {len(done_cells)} cells already in {results_path}")

    test = test_data(cfg)
    cfg_dict = cfg.to_dict()
    chunk_size = max(100, -(-cfg.test_horizon // max(1, 2 * jobs)))
    chunks = [(lo, min(lo + chunk_size, cfg.test_horizon))
              for lo in range(0, cfg.test_horizon, chunk_size)]

    failed_cells: dict = {}
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    trees_by_cell: dict = {}
    policies_by_cell: dict = {}
    eval_ok: list = []
    try:
        fold_payloads = [
            {"task": "fold", "config": cfg_dict, "n": n, "s": s, "k": k}
            for (n, s) in cells for k in range(cfg.folds)
        ]
        refit_payloads = [
            {"task": "refit", "config": cfg_dict, "n": n, "s": s} for (n, s) in cells
        ]
        for res in _run_tasks(fold_payloads + refit_payloads, pool):
            cell = (res["n"], res["s"])
            if not res["ok"]:
                failed_cells.setdefault(cell, res["error"])
                continue
            out = res["result"]
            if "trees" in out:
                trees_by_cell.setdefault(cell, {})[out["k"]] = out["trees"]
            else:
                policies_by_cell[cell] = out["policies"]

        eval_payloads = []
        for (n, s) in cells:
            if (n, s) in failed_cells:
                continue
            cell_trees = [t for k in range(cfg.folds) for t in trees_by_cell[(n, s)][k]]
            for chunk in chunks:
                eval_payloads.append({
                    "task": "eval", "config": cfg_dict, "n": n, "s": s, "chunk": chunk,
                    "trees": cell_trees, "policies": policies_by_cell[(n, s)],
                })
        for res in _run_tasks(eval_payloads, pool):
            cell = (res["n"], res["s"])
            if not res["ok"]:
                failed_cells.setdefault(cell, res["error"])
            else:
                eval_ok.append(res["result"])
    finally:
        if pool is not None:
            pool.shutdown()

    # assemble rows per cell in deterministic order
    rows = []
    by_cell: dict = {}
    for res in eval_ok:
        by_cell.setdefault((res["n"], res["s"]), []).append(res)
    for (n, s) in cells:
        if (n, s) in failed_cells:
            continue
        parts = sorted(by_cell.get((n, s), []), key=lambda r: r["chunk"])
        if len(parts) != len(chunks):
            failed_cells[(n, s)] = "incomplete evaluation"
            continue
        for name in policy_names:
            costs = np.concatenate([p["costs"][name] for p in parts])
            units = np.vstack([p["units"][name] for p in parts])
            seg_means = _segment_stats(units, test.segments)
            base = {
                "problem": cfg.problem, "N": n, "sample": s, "policy": name,
                "mean_cost": _fmt(costs.mean()), "mean_profit": _fmt(-costs.mean()),
            }
            rows.append({**base, "segment": "all", "segment_mean_profit": _fmt(units.mean())})
            for label, mean in sorted(seg_means.items()):
                rows.append({**base, "segment": label, "segment_mean_profit": _fmt(mean)})

    with open(results_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in existing:
            writer.writerow(row)
        for row in rows:
            writer.writerow(row)

    if cfg.save_ensembles or cfg.dump_trees:
        ok_cells = [c for c in cells if c not in failed_cells]
        _dump_artifacts(cfg, ok_cells, trees_by_cell, policies_by_cell)

    if failed_cells:
        with open(errors_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["N", "sample", "error"])
            for (n, s), msg in sorted(failed_cells.items()):
                writer.writerow([n, s, msg])
        print(f"recorded {len(failed_cells)} failed cells in {errors_path}")
        return 2
    print(f"wrote {len(rows)} result rows to {results_path}")
    return 0


def _dump_artifacts(cfg, cells, trees_by_cell, policies_by_cell):
    problem = build_problem(cfg)
    for (n, s) in cells:
        cell_trees = [t for k in range(cfg.folds) for t in trees_by_cell[(n, s)][k]]
        ens = _ensemble_from_parts(cfg, n, s, cell_trees, policies_by_cell[(n, s)], problem)
        cell_dir = Path(cfg.output_dir) / "ensembles" / f"N{n}_s{s}"
        if cfg.save_ensembles:
            save_ensemble(ens, cell_dir)
        if cfg.dump_trees:
            dump_dir = Path(cfg.output_dir) / "trees" / f"N{n}_s{s}"
            dump_dir.mkdir(parents=True, exist_ok=True)
            rng = SeedSpec(cfg.master_seed).generator("dump", n, s)
            picks = rng.choice(len(ens.trees), size=min(2, len(ens.trees)), replace=False)
            names = [k.value for k in ens.kinds]
            feats = test_data(cfg).feature_names
            for t in sorted(int(i) for i in picks):
                k, r = divmod(t, cfg.repetitions)
                dot = tree_to_dot(ens.trees[t], names, feature_names=feats)
                (dump_dir / f"k{k}_r{r}.dot").write_text(dot)


def cmd_report(cfg: ExperimentConfig) -> int:
    results_path = Path(cfg.output_dir) / "results" / "results.csv"
    rows = _read_results(results_path)
    if not rows:
        raise ConfigError(f"no results found at {results_path}")
    report_dir = Path(cfg.output_dir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    def group(rows, overall: bool):
        grouped: dict = {}
        for r in rows:
            if (r["segment"] == "all") != overall:
                continue
            key = (r["problem"], int(r["N"]), r["policy"]) if overall else (
                r["problem"], int(r["N"]), r["policy"], r["segment"])
            value = float(r["mean_profit"]) if overall else float(r["segment_mean_profit"])
            grouped.setdefault(key, []).append((int(r["sample"]), value))
        return grouped

    def ci_cells(values):
        if len(values) < 2:
            m = float(np.mean(values))
            return m, m, m
        ci = student_t_ci(values, alpha=0.05)
        return ci.mean, ci.lo, ci.hi

    summary = group(rows, overall=True)
    with open(report_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "N", "policy", "mean", "ci_lo", "ci_hi"])
        degenerate = False
        for key in sorted(summary):
            vals = [v for _, v in sorted(summary[key])]
            degenerate |= len(vals) < 2
            mean, lo, hi = ci_cells(vals)
            writer.writerow([key[0], key[1], key[2], _fmt(mean), _fmt(lo), _fmt(hi)])
        if degenerate:
            print("note: some cells have S < 2; their intervals are degenerate")

    segments = group(rows, overall=False)
    with open(report_dir / "segments.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "N", "policy", "segment", "mean", "ci_lo", "ci_hi"])
        for key in sorted(segments):
            vals = [v for _, v in sorted(segments[key])]
            mean, lo, hi = ci_cells(vals)
            writer.writerow([key[0], key[1], key[2], key[3], _fmt(mean), _fmt(lo), _fmt(hi)])
    print(f"wrote report to {report_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prescribe-select",
        description="Candidate-policy library + policy-tree selector experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "run", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        if name == "gen":
            p.add_argument("--segments", action="store_true",
                           help="include segment label columns in CSVs")
        if name == "run":
            p.add_argument("--jobs", type=int, default=None, help="worker processes")
            p.add_argument("--dump-trees", action="store_true",
                           help="export two randomly chosen selector trees per cell as DOT")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if getattr(args, "segments", False):
            cfg.segments = True
        if getattr(args, "dump_trees", False):
            cfg.dump_trees = True
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "run":
            return cmd_run(cfg, jobs=args.jobs)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
