"""Mini-batch momentum training of the MLP with any registered loss.

Stateful losses (ALDR-KL) keep one temperature per training example. The
state is indexed by the example's position in the training split, so the
batch shuffling never changes which temperature belongs to which example.
"""
import logging
import math
from dataclasses import dataclass, field, fields
from dataclasses import replace as replace_cfg

import numpy as np

from .baselines import ConfigError
from .metrics import topk_accuracy
from .mlp import backward, forward_batch, init_mlp

log = logging.getLogger(__name__)

TOPK = (1, 2, 3, 4, 5)


class TrainingDiverged(RuntimeError):
    """The loss became non-finite; the message says where."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-3
    milestones: tuple = (50, 75)
    lr_factor: float = 0.1
    hidden: int = None
    normalize: bool = None  # None: on for the losses that ask for it
    seed: int = 0
    eval_test: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.lr > 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("need lr > 0, momentum in [0, 1) and weight_decay >= 0")
        self.milestones = tuple(self.milestones)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        return cls(**raw)


def lr_at(config, epoch):
    """Learning rate used during 1-based ``epoch``."""
    drops = sum(1 for m in config.milestones if epoch > m)
    return config.lr * config.lr_factor ** drops


@dataclass
class Splits:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray = None
    y_test: np.ndarray = None
    corrupted: np.ndarray = None  # mask over training rows

    def __post_init__(self):
        if self.corrupted is None:
            self.corrupted = np.zeros(len(self.y_train), dtype=bool)


@dataclass
class MetricRecord:
    run_id: str
    fold: int
    epoch: int
    split: str
    topk: tuple
    mean_loss: float
    lambda_clean: float = math.nan
    lambda_corrupted: float = math.nan

    FIELDS = ("run_id", "fold", "epoch", "split", "top1", "top2", "top3", "top4", "top5",
              "mean_loss", "lambda_clean", "lambda_corrupted")

    def row(self):
        return [self.run_id, self.fold, self.epoch, self.split, *self.topk,
                self.mean_loss, self.lambda_clean, self.lambda_corrupted]


@dataclass
class TrainRunReport:
    records: list
    best_epoch: int
    best_model: object
    final_model: object
    lambdas: np.ndarray = None
    val_top1: float = 0.0
    test_topk: tuple = ()
    extra: dict = field(default_factory=dict)


def _topk_all(scores, labels):
    K = scores.shape[1]
    return tuple(topk_accuracy(scores, labels, min(k, K)) for k in TOPK)


def evaluate(model, loss, X, y, normalize):
    F, G, _ = forward_batch(model, X, normalize)
    values, _ = loss(G, y)
    return _topk_all(F, y), float(np.mean(values))


def train(config, splits, loss, run_id="run", fold=0, model=None, lambdas=None,
          on_epoch=None):
    """Train a fresh (or the given) model and keep the best validation epoch.

    ``lambdas`` seeds the per-example temperatures of a stateful loss
    (default: every entry at ``lambda0``). ``on_epoch(epoch, model,
    lambdas)`` is called after every epoch.
    """
    rng = np.random.default_rng(config.seed)
    Xtr, ytr = splits.X_train, np.asarray(splits.y_train)
    n, d = Xtr.shape
    K = int(max(ytr.max(), splits.y_val.max() if len(splits.y_val) else 0,
                splits.y_test.max() if splits.y_test is not None else 0)) + 1
    if model is None:
        model = init_mlp(d, K, config.hidden, seed=config.seed)
    K = model.shape[2]
    normalize = loss.normalize_logits if config.normalize is None else config.normalize
    params = model.params()
    buffers = [np.zeros_like(p) for p in params]
    beta, wd = config.momentum, config.weight_decay

    if loss.stateful:
        lam0 = loss.params["lambda0"]
        lambdas = np.full(n, float(lam0)) if lambdas is None else np.asarray(lambdas, float).copy()

    records, best = [], (-1.0, 0, model.copy(), ())
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(config, epoch)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            _, G, cache = forward_batch(model, Xtr[idx], normalize)
            if not np.all(np.isfinite(G)):
                raise TrainingDiverged(f"{run_id}: non-finite logits at epoch {epoch}, batch {b}")
            if loss.stateful:
                values, lambdas[idx], dG = loss.step(G, ytr[idx], lambdas[idx])
            else:
                values, dG = loss(G, ytr[idx])
            batch_loss = float(values.sum())
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"{run_id}: non-finite loss {batch_loss} at epoch {epoch}, batch {b}")
            total += batch_loss
            seen += len(idx)
            grads = backward(model, cache, dG / len(idx))
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(f"{run_id}: non-finite gradient at epoch {epoch}, batch {b}")
            for p, g, m in zip(params, grads, buffers):
                m *= beta
                m += (1.0 - beta) * (g + wd * p)
                p -= lr * m

        lam_clean = lam_bad = math.nan
        if loss.stateful:
            if np.any(~splits.corrupted):
                lam_clean = float(lambdas[~splits.corrupted].mean())
            if np.any(splits.corrupted):
                lam_bad = float(lambdas[splits.corrupted].mean())
        F_tr, _, _ = forward_batch(model, Xtr, False)
        records.append(MetricRecord(run_id, fold, epoch, "train", _topk_all(F_tr, ytr),
                                    total / seen, lam_clean, lam_bad))
        val_top1 = math.nan
        if len(splits.y_val):
            val_topk, val_loss = evaluate(model, loss, splits.X_val, splits.y_val, normalize)
            records.append(MetricRecord(run_id, fold, epoch, "val", val_topk, val_loss))
            val_top1 = val_topk[0]
        test_topk = ()
        if config.eval_test and splits.X_test is not None and len(splits.y_test):
            test_topk, test_loss = evaluate(model, loss, splits.X_test, splits.y_test, normalize)
            records.append(MetricRecord(run_id, fold, epoch, "test", test_topk, test_loss))
        # without a validation split the last epoch is kept
        if val_top1 > best[0] or (math.isnan(val_top1) and epoch == config.epochs):
            best = (val_top1, epoch, model.copy(), test_topk)
        if on_epoch is not None:
            on_epoch(epoch, model, lambdas)

    return TrainRunReport(records, best[1], best[2], model,
                          lambdas if loss.stateful else None, best[0], best[3])


@dataclass
class SynthResult:
    lambda_clean_probe: float
    lambda_noisy_probe: float
    grids: dict  # stage name -> class-index grid
    lambdas: np.ndarray
    probe_index: tuple  # (clean, noisy) rows in the augmented data


# Probe placement. The clean probe is an atypical class-0 point in the outer
# tail of the (0.8, 0.8) blob. The mislabelled probe lies between that blob
# and the origin, inside class-0 territory, and carries label 1.
CLEAN_PROBE = ((1.3, 1.3), 0)
NOISY_PROBE = ((0.3, 0.3), 1)


def synth_protocol(n_per_cluster=50, seed=0, pretrain_epochs=1000, finetune_epochs=100,
                   lr=0.01, finetune_lr=None, lambda0=10.0, alpha=0.05, hidden=16,
                   resolution=60,
                   clean_probe=CLEAN_PROBE, noisy_probe=NOISY_PROBE):
    """Pretrain with CE, add a clean-hard and a mislabelled probe, then finetune.

    Finetuning runs twice from the same pretrained weights: once with CE
    and once with ALDR-KL. Logits are not normalized and no weight decay is
    used here. Returns the final temperatures of both probes and decision
    grids for the three models.
    """
    from .data import add_probe, synthetic_gaussians
    from .mlp import decision_grid
    from .registry import make_loss

    data = synthetic_gaussians(n_per_cluster, seed)
    cfg = TrainConfig(epochs=pretrain_epochs, lr=lr, weight_decay=0.0, milestones=(),
                      hidden=hidden, normalize=False, seed=seed, eval_test=False)
    empty = np.empty((0, 2)), np.empty(0, dtype=int)
    pre = train(cfg, Splits(data.features, data.labels, *empty), make_loss("ce"),
                model=init_mlp(2, 3, hidden, seed)).final_model

    data = add_probe(add_probe(data, *clean_probe), *noisy_probe)
    splits = Splits(data.features, data.labels, *empty, corrupted=data.probe & (data.labels == 1))
    ft = replace_cfg(cfg, epochs=finetune_epochs, lr=finetune_lr or lr)
    ce_model = train(ft, splits, make_loss("ce"), model=pre.copy()).final_model
    aldr = train(ft, splits, make_loss("aldr_kl", lambda0=lambda0, alpha=alpha, c=0.1),
                 model=pre.copy())
    bounds = (-2.0, 2.0, -2.0, 2.0)
    grids = {name: decision_grid(m, bounds, resolution)
             for name, m in (("pretrained", pre), ("ce", ce_model), ("aldr_kl", aldr.final_model))}
    clean_i, noisy_i = data.n - 2, data.n - 1
    return SynthResult(float(aldr.lambdas[clean_i]), float(aldr.lambdas[noisy_i]), grids,
                       aldr.lambdas, (clean_i, noisy_i))
