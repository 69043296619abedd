"""Cross-validated grid search over losses, learning rates and noise settings."""
import csv
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import NoiseSpec, inject_noise, make_folds
from .metrics import leaderboard
from .registry import default_grid, make_loss
from .train import MetricRecord, Splits, TrainConfig, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
WORKERS_ENV = "LDR_WORKERS"
LR_GRID = (0.1, 0.01, 0.001)


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring %s=%r (not an integer)", WORKERS_ENV, raw)
        return 1


@dataclass
class NoisyProblem:
    """A dataset with label noise applied outside the clean test holdout."""

    X: np.ndarray
    y_clean: np.ndarray
    y_noisy: np.ndarray
    corrupted: np.ndarray
    plan: object

    def splits(self, fold):
        tr, va, te = self.plan.split(fold)
        return Splits(self.X[tr], self.y_noisy[tr], self.X[va], self.y_noisy[va],
                      self.X[te], self.y_clean[te], self.corrupted[tr])


def prepare(dataset, noise, folds=5, seed=0, test_fraction=0.1):
    plan = make_folds(dataset.n, test_fraction, folds, None, seed)
    noisy, mask = inject_noise(dataset.labels, dataset.K, noise)
    noisy = np.where(plan.test, dataset.labels, noisy)
    mask &= ~plan.test
    # deal folds again, now stratified by the labels the learner actually sees
    # (the same seed reproduces the same test holdout)
    plan = make_folds(dataset.n, test_fraction, folds, noisy, seed)
    return NoisyProblem(dataset.features, dataset.labels, noisy, mask, plan)


@dataclass
class RunSummary:
    fold: int
    params: dict
    lr: float
    val_top1: float
    test_topk: tuple
    final_lambda_clean: float
    final_lambda_corrupted: float
    records: list = field(default_factory=list)


def _run_one(task):
    problem, fold, loss_name, params, config = task
    loss = make_loss(loss_name, **params)
    report = train(config, problem.splits(fold), loss,
                   run_id=f"{loss.label}|lr={config.lr:g}", fold=fold)
    last_train = [r for r in report.records if r.split == "train"][-1]
    return RunSummary(fold, params, config.lr, report.val_top1, report.test_topk,
                      last_train.lambda_clean, last_train.lambda_corrupted, report.records)


def _map(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, tasks))


@dataclass
class CVResult:
    loss: str
    params: dict
    lr: float
    test_top1_mean: float
    test_top1_std: float
    test_topk_mean: tuple
    grid_val: dict
    runs: list

    def lambda_gap(self):
        """Mean final corrupted and clean lambda over the selected runs."""
        chosen = self.selected_runs()
        return (float(np.mean([r.final_lambda_corrupted for r in chosen])),
                float(np.mean([r.final_lambda_clean for r in chosen])))

    def selected_runs(self):
        return [r for r in self.runs if r.params == self.params and r.lr == self.lr]


def cross_validate(problem, loss_name, grid=None, lr_grid=LR_GRID, config=None,
                   workers=None):
    """Train every (grid point, lr, fold) and select by mean validation top-1."""
    config = config or TrainConfig()
    grid = default_grid(loss_name) if grid is None else grid
    n_folds = problem.plan.n_folds
    tasks = [(problem, fold, loss_name, params, replace(config, lr=lr))
             for params, lr in itertools.product(grid, lr_grid) for fold in range(n_folds)]
    runs = _map(tasks, worker_count() if workers is None else workers)
    grid_val = {}
    for r in runs:
        grid_val.setdefault((repr(sorted(r.params.items())), r.lr), []).append(r.val_top1)
    # ties go to the first grid point in declaration order
    best_key = max(grid_val, key=lambda key: np.mean(grid_val[key]))
    best = next(r for r in runs if (repr(sorted(r.params.items())), r.lr) == best_key)
    chosen = [r for r in runs if r.params == best.params and r.lr == best.lr]
    top = np.array([r.test_topk for r in chosen])
    return CVResult(loss_name, best.params, best.lr, float(top[:, 0].mean()),
                    float(top[:, 0].std()), tuple(top.mean(axis=0)),
                    {k: float(np.mean(v)) for k, v in grid_val.items()}, runs)


def output_name(dataset, loss, noise, seed):
    return f"{dataset}_{loss}_{noise}_{seed}.csv"


def write_records(path, records):
    """One MetricRecord per line with a leading schema_version column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("schema_version",) + MetricRecord.FIELDS)
        for rec in records:
            w.writerow([SCHEMA_VERSION] + rec.row())


def run_bench(dataset, losses, noises, config, out_dir, folds=5, seed=0, lr_grid=LR_GRID,
              grids=None):
    """Every loss under every noise setting; returns results and the leaderboard."""
    results, table = {}, []
    for noise in noises:
        problem = prepare(dataset, noise, folds, seed)
        for loss_name in losses:
            grid = (grids or {}).get(loss_name)
            cv = cross_validate(problem, loss_name, grid, lr_grid, replace(config, seed=seed))
            write_records(Path(out_dir) / output_name(dataset.name, loss_name, noise.tag, seed),
                          [rec for run in cv.runs for rec in run.records])
            results.setdefault(loss_name, {})[noise.tag] = dict(enumerate(cv.test_topk_mean, 1))
            table.append((noise.tag, cv))
    return table, leaderboard(results)


def parse_noise(text, seed=0, pairs=None):
    """``clean``, ``uniform:0.3``, ``circular:0.2`` or ``pairwise:0.1``."""
    if text == "clean":
        return NoiseSpec("uniform", 0.0, seed=seed)
    kind, _, rate = text.partition(":")
    return NoiseSpec(kind, float(rate), list(pairs or []), seed)
