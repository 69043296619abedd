"""Top-k accuracy and rank aggregation across losses."""
import warnings
from dataclasses import dataclass

import numpy as np


def topk_hits(scores, labels, k):
    """Boolean per row: is the label among the k best scores?

    Ties are broken toward the lower class index, the same rule ``argmax``
    uses, so a label loses to every tied class with a smaller index.
    """
    S = np.atleast_2d(np.asarray(scores, dtype=float))
    y = np.asarray(labels, dtype=int)
    K = S.shape[1]
    if not 1 <= k <= K:
        raise ValueError(f"k must lie in [1, {K}]")
    sy = S[np.arange(len(y)), y][:, None]
    lower = np.arange(K)[None, :] < y[:, None]
    ahead = (S > sy) | ((S == sy) & lower)
    return ahead.sum(axis=1) < k


def topk_accuracy(scores, labels, k):
    if len(labels) == 0:
        return float("nan")
    return float(topk_hits(scores, labels, k).mean())


def class_balanced_topk(scores, labels, k, K=None):
    """Per-class top-k accuracy averaged over classes with equal weight.

    With ``K`` given, classes that never occur in ``labels`` are skipped
    with a warning.
    """
    y = np.asarray(labels, dtype=int)
    hits = topk_hits(scores, y, k)
    present = np.unique(y)
    if K is not None and len(present) < K:
        missing = sorted(set(range(K)) - set(present.tolist()))
        warnings.warn(f"classes {missing} absent from labels; skipped", stacklevel=2)
    return float(np.mean([hits[y == c].mean() for c in present]))


def fractional_ranks(values):
    """Rank 1 for the largest value; tied values share the mean of their ranks."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(-v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass
class LeaderboardRow:
    loss: str
    rank_by_k: dict
    overall: float


def leaderboard(results):
    """Average ranks per loss.

    ``results[loss][setting][k]`` is an accuracy; ``setting`` is any
    hashable cell label (dataset, noise level, ...). Every loss must supply
    every (setting, k) cell that any other loss supplies.
    """
    losses = sorted(results)
    if not losses:
        return []
    cells = sorted({(s, k) for loss in losses for s, per_k in results[loss].items()
                    for k in per_k}, key=repr)
    for loss in losses:
        for s, k in cells:
            if s not in results[loss] or k not in results[loss][s]:
                raise KeyError(f"missing result for loss {loss!r}, setting {s!r}, k={k}")
    ranks = {loss: {} for loss in losses}
    for s, k in cells:
        r = fractional_ranks([results[loss][s][k] for loss in losses])
        for loss, rank in zip(losses, r):
            ranks[loss].setdefault(k, []).append(rank)
    rows = []
    for loss in losses:
        by_k = {k: float(np.mean(v)) for k, v in sorted(ranks[loss].items())}
        overall = float(np.mean([x for v in ranks[loss].values() for x in v]))
        rows.append(LeaderboardRow(loss, by_k, overall))
    return sorted(rows, key=lambda r: (r.overall, r.loss))
