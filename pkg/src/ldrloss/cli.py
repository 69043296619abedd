"""Command-line entry point: ``ldrloss <subcommand> ...``.

Exit status is 0 on success, 1 when a check fails and 2 for usage or
configuration errors.
"""
import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ConfigError
from .train import TrainingDiverged

log = logging.getLogger("ldrloss")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SCHEMA_VERSION = 1


# -- configuration -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: str
    losses: list  # [(name, grid)]
    noises: list = field(default_factory=lambda: ["clean"])
    seed: int = 0
    folds: int = 5
    lr_grid: list = field(default_factory=lambda: [0.1, 0.01, 0.001])
    training: dict = field(default_factory=dict)
    output_dir: str = "results"


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path, multi):
    """Read and fully validate a JSON experiment file before anything runs."""
    from .registry import default_grid, loss_names, make_loss
    from .train import TrainConfig

    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    _require(isinstance(raw, dict), "config must be a JSON object")
    _require(raw.get("schema_version") == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}")
    allowed = {"schema_version", "dataset", "seed", "folds", "lr_grid", "training",
               "output_dir", "noise", "noises", "loss", "params", "grid", "losses", "grids"}
    unknown = set(raw) - allowed
    _require(not unknown, f"unknown config keys {sorted(unknown)}")
    _require(isinstance(raw.get("dataset"), str), "dataset must be a file path")

    if multi:
        names = raw.get("losses")
        _require(isinstance(names, list) and names, "losses must be a non-empty list")
        grids = raw.get("grids", {})
        losses = [(n, grids.get(n)) for n in names]
        noises = raw.get("noises", ["clean"])
    else:
        _require(isinstance(raw.get("loss"), str), "loss must be a loss name")
        _require(not ("params" in raw and "grid" in raw), "give either params or grid")
        grid = raw["grid"] if "grid" in raw else ([raw["params"]] if "params" in raw else None)
        losses = [(raw["loss"], grid)]
        noises = [raw.get("noise", "clean")]

    for name, grid in losses:
        _require(name in loss_names(), f"unknown loss {name!r}")
        grid = default_grid(name) if grid is None else grid
        _require(isinstance(grid, list) and grid, f"grid for {name} must be a non-empty list")
        for params in grid:
            _require(isinstance(params, dict), f"grid entries for {name} must be objects")
            make_loss(name, **params)  # raises ConfigError on bad values
    _require(isinstance(noises, list) and noises, "noises must be a non-empty list")
    for text in noises:
        _parse_noise_text(text)
    lr_grid = raw.get("lr_grid", [0.1, 0.01, 0.001])
    _require(isinstance(lr_grid, list) and lr_grid and all(
        isinstance(v, (int, float)) and v > 0 for v in lr_grid), "lr_grid must hold positive numbers")
    folds = raw.get("folds", 5)
    _require(isinstance(folds, int) and folds >= 2, "folds must be an integer >= 2")
    training = raw.get("training", {})
    _require(isinstance(training, dict), "training must be an object")
    TrainConfig.from_dict(training)
    return ExperimentConfig(raw["dataset"], losses, noises, int(raw.get("seed", 0)), folds,
                            lr_grid, training, raw.get("output_dir", "results"))


def _parse_noise_text(text):
    _require(isinstance(text, str), f"noise must be a string, got {text!r}")
    if text == "clean":
        return "uniform", 0.0
    kind, sep, rate = text.partition(":")
    _require(sep and kind in ("uniform", "pairwise", "circular"), f"bad noise spec {text!r}")
    try:
        value = float(rate)
    except ValueError:
        raise ConfigError(f"bad noise rate in {text!r}") from None
    _require(0.0 <= value <= 1.0, f"noise rate out of [0, 1] in {text!r}")
    return kind, value


def _noise_spec(text, dataset, seed):
    from .data import NoiseSpec, pair_indices

    kind, rate = _parse_noise_text(text)
    pairs = pair_indices(dataset) if kind == "pairwise" else []
    return NoiseSpec(kind, rate, pairs, seed)


# -- subcommands ---------------------------------------------------------------

def _load_data(cfg):
    from .data import load_dataset

    try:
        return load_dataset(cfg.dataset)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset {cfg.dataset}: {exc}") from None


def _summary_rows(table):
    for noise, cv in table:
        yield [SCHEMA_VERSION, cv.loss, noise, json.dumps(cv.params, sort_keys=True), cv.lr,
               *(round(v, 6) for v in cv.test_topk_mean), round(cv.test_top1_std, 6)]


def _write_summary(path, table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "loss", "noise", "params", "lr",
                    "test_top1", "test_top2", "test_top3", "test_top4", "test_top5", "test_top1_std"])
        w.writerows(_summary_rows(table))


def cmd_train(args, multi=False):
    from .bench import run_bench
    from .train import TrainConfig

    cfg = load_config(args.config, multi)
    if args.seed is not None:
        cfg.seed = args.seed
    data = _load_data(cfg)
    try:
        noises = [_noise_spec(t, data, cfg.seed) for t in cfg.noises]
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg.output_dir)
    table, board = run_bench(data, [n for n, _ in cfg.losses], noises,
                             TrainConfig.from_dict(cfg.training), out, cfg.folds, cfg.seed,
                             tuple(cfg.lr_grid), {n: g for n, g in cfg.losses if g is not None})
    _write_summary(out / "summary.csv", table)
    for row in _summary_rows(table):
        print(",".join(str(v) for v in row[1:]))
    if multi:
        with open(out / "leaderboard.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            ks = sorted(board[0].rank_by_k) if board else []
            w.writerow(["schema_version", "loss", *[f"rank_top{k}" for k in ks], "overall"])
            for row in board:
                w.writerow([SCHEMA_VERSION, row.loss, *[row.rank_by_k[k] for k in ks], row.overall])
                print(f"{row.loss:10s} overall rank {row.overall:.3f}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_suites

    results = run_suites(args.instances, args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:28s} worst={r.worst:.2e} n={r.instances}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def cmd_calibrate(args):
    from .calibration import run_calibration

    rows = run_calibration(args.n_q, args.seed or 0)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["schema_version", "claim", "checked", "passed", "inconclusive", "worst", "ok"])
        for r in rows:
            w.writerow([SCHEMA_VERSION, r.claim, r.checked, r.passed, r.inconclusive,
                        f"{r.worst:.3e}", "pass" if r.ok else "fail"])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK if all(r.ok for r in rows) else EXIT_FAIL


def cmd_project(args):
    from .topk import omega_k_argmax

    tokens = args.q if args.q else sys.stdin.read().replace(",", " ").split()
    try:
        q = np.array([float(t) for t in tokens])
    except ValueError:
        raise ConfigError("q must be a list of numbers") from None
    if q.size < 1:
        raise ConfigError("empty q vector")
    try:
        res = omega_k_argmax(q, args.lam, args.k)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(" ".join(f"{v:.10g}" for v in res.p))
    print(f"a={res.a} objective={res.objective:.10g}")
    return EXIT_OK


def cmd_synth(args):
    from .train import synth_protocol

    res = synth_protocol(seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, grid in res.grids.items():
        np.savetxt(out / f"synthetic_grid_{name}.csv", grid, fmt="%d", delimiter=",")
    ratio = res.lambda_noisy_probe / max(res.lambda_clean_probe, 1e-12)
    print(f"lambda clean probe  : {res.lambda_clean_probe:.4f}")
    print(f"lambda noisy probe  : {res.lambda_noisy_probe:.4f}")
    ok = res.lambda_noisy_probe >= 10 * res.lambda_clean_probe
    print(f"noisy/clean >= 10   : {'yes' if ok else 'no'} (ratio {min(ratio, 1e12):.3g})")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser():
    parser = argparse.ArgumentParser(prog="ldrloss", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="cross-validated training of one loss")
    p.add_argument("--config", required=True)
    p = sub.add_parser("bench", help="several losses and noise settings plus a leaderboard")
    p.add_argument("--config", required=True)
    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--instances", type=int, default=200)
    p = sub.add_parser("calibrate", help="conditional-risk minimizer checks, CSV output")
    p.add_argument("--n-q", type=int, default=200)
    p.add_argument("--out", default=None)
    p = sub.add_parser("project", help="solve the capped-simplex problem for one q")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("q", nargs="*", help="scores (read from stdin when omitted)")
    p = sub.add_parser("synth", help="two-probe synthetic experiment")
    p.add_argument("--out", default="synth_out")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "train": lambda a: cmd_train(a, multi=False),
        "bench": lambda a: cmd_train(a, multi=True),
        "gradcheck": cmd_gradcheck,
        "calibrate": cmd_calibrate,
        "project": cmd_project,
        "synth": cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
