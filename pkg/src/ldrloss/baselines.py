"""Comparison losses for noisy-label classification.

Probability-based losses see ``p = softmax(f)`` and are differentiated by
first forming ``dL/dp`` and then applying the softmax Jacobian
``dL/df = p * (dL/dp - <dL/dp, p>)``. CS and WW act on raw scores.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .ldr import LossGradPair
from .numerics import tempered_softmax

P_FLOOR = 1e-12

FAMILIES = (
    "ce", "cs", "ww", "mae", "nce", "rll", "gce", "tgce", "sce", "js",
    "mse", "agce", "aul", "nce_rce", "nce_agce", "nce_aul",
)

# Per-family defaults. Combination losses use the individual losses' own
# defaults; see DEFAULT_GRIDS for the tuned values.
DEFAULTS = {
    "ce": {},
    "cs": {"c": 1.0},
    "ww": {"c": 1.0},
    "mae": {},
    "nce": {},
    "rll": {"alpha": 1.0},
    "gce": {"q": 0.7},
    "tgce": {"q": 0.7, "trunc": 0.5},
    "sce": {"alpha": 0.5, "A": -4.0},
    "js": {"pi1": 0.5},
    "mse": {},
    "agce": {"a": 6.0, "q": 1.5},
    "aul": {"a": 6.3, "q": 1.5},
    "nce_rce": {"alpha": 5.0, "beta": 5.0, "A": -4.0},
    "nce_agce": {"alpha": 5.0, "beta": 5.0, "a": 6.0, "q": 1.5},
    "nce_aul": {"alpha": 5.0, "beta": 5.0, "a": 6.3, "q": 1.5},
}

_COMBO = [{"alpha": 0.1, "beta": 9.9}, {"alpha": 5.0, "beta": 5.0}, {"alpha": 9.9, "beta": 0.1}]

DEFAULT_GRIDS = {
    "ce": [{}],
    "mse": [{}],
    "mae": [{}],
    "cs": [{"c": c} for c in (0.1, 1.0, 10.0)],
    "ww": [{"c": c} for c in (0.1, 1.0, 10.0)],
    "rll": [{"alpha": a} for a in (0.1, 1.0, 10.0)],
    "gce": [{"q": q} for q in (0.05, 0.7, 0.95)],
    "tgce": [{"q": q, "trunc": 0.5} for q in (0.05, 0.7, 0.95)],
    "sce": [{"alpha": a, "A": -4.0} for a in (0.05, 0.5, 0.95)],
    "js": [{"pi1": p} for p in (0.1, 0.5, 0.9)],
    "nce_rce": _COMBO,
    "nce_agce": _COMBO,
    "nce_aul": _COMBO,
}


class ConfigError(ValueError):
    """Invalid loss family or hyperparameter."""


@dataclass
class BaselineSpec:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = self.family.lower()
        if self.family not in DEFAULTS:
            raise ConfigError(f"unknown loss family {self.family!r}")
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise ConfigError(f"{self.family}: unknown parameters {sorted(unknown)}")
        self.params = {**DEFAULTS[self.family], **self.params}
        _validate(self.family, self.params)


def _validate(family, prm):
    def need(cond, msg):
        if not cond:
            raise ConfigError(f"{family}: {msg}")

    if family in ("cs", "ww"):
        need(prm["c"] >= 0, "margin c must be >= 0")
    elif family == "rll":
        need(prm["alpha"] > 0, "alpha must be > 0")
    elif family == "gce":
        need(0 <= prm["q"] <= 1, "q must lie in [0, 1]")
    elif family == "tgce":
        need(0 < prm["q"] <= 1, "q must lie in (0, 1]")
        need(0 <= prm["trunc"] < 1, "trunc must lie in [0, 1)")
    elif family == "sce":
        need(prm["A"] < 0, "A must be negative")
        need(0 <= prm["alpha"] <= 1, "alpha must lie in [0, 1]")
    elif family == "js":
        need(0 < prm["pi1"] < 1, "pi1 must lie in (0, 1)")
    if family in ("agce", "nce_agce"):
        need(prm["a"] > 0 and prm["q"] > 0, "need a > 0 and q > 0")
    if family in ("aul", "nce_aul"):
        need(prm["a"] > 1 and prm["q"] > 0, "need a > 1 and q > 0")
    if family == "nce_rce":
        need(prm["A"] < 0, "A must be negative")


# -- probability-space pieces: each returns (value, dL/dp) on a batch --------

def _py(P, Y):
    return P[np.arange(len(Y)), Y]


def _onehot_scaled(P, Y, col):
    G = np.zeros_like(P)
    G[np.arange(len(Y)), Y] = col
    return G


def _ce(P, Y):
    py = np.maximum(_py(P, Y), P_FLOOR)
    return -np.log(py), _onehot_scaled(P, Y, -1.0 / py)


def _mae(P, Y):
    return 2.0 * (1.0 - _py(P, Y)), _onehot_scaled(P, Y, -2.0)


def _nce(P, Y):
    logp = np.log(np.maximum(P, P_FLOOR))
    num = logp[np.arange(len(Y)), Y]
    den = logp.sum(axis=1)
    dnum = _onehot_scaled(P, Y, 1.0 / np.maximum(_py(P, Y), P_FLOOR))
    dden = 1.0 / np.maximum(P, P_FLOOR)
    G = (dnum * den[:, None] - num[:, None] * dden) / den[:, None] ** 2
    return num / den, G


def _rll(P, Y, alpha):
    K = P.shape[1]
    L = np.log(alpha + P)
    ly = L[np.arange(len(Y)), Y]
    value = -ly + (L.sum(axis=1) - ly) / (K - 1)
    G = 1.0 / ((K - 1) * (alpha + P))
    G[np.arange(len(Y)), Y] = -1.0 / (alpha + _py(P, Y))
    return value, G


def _gce(P, Y, q):
    if q == 0:
        return _ce(P, Y)
    py = _py(P, Y)
    return (1.0 - py ** q) / q, _onehot_scaled(P, Y, -py ** (q - 1))


def _tgce(P, Y, q, trunc):
    py = _py(P, Y)
    clipped = np.maximum(py, trunc)
    slope = np.where(py > trunc, -py ** (q - 1), 0.0)
    return (1.0 - clipped ** q) / q, _onehot_scaled(P, Y, slope)


def _sce(P, Y, alpha, A):
    v_ce, g_ce = _ce(P, Y)
    v_mae, g_mae = _mae(P, Y)
    w = -(1.0 - alpha) * A / 2.0
    return alpha * v_ce + w * v_mae, alpha * g_ce + w * g_mae


def _js(P, Y, pi1):
    """Jensen-Shannon loss with m = pi1 e_y + (1 - pi1) p, normalized by
    Z = -(1 - pi1) log(1 - pi1)."""
    rows = np.arange(len(Y))
    w = 1.0 - pi1
    M = w * P
    M[rows, Y] += pi1
    Pf = np.maximum(P, P_FLOOR)
    logratio = np.log(Pf) - np.log(np.maximum(M, P_FLOOR))
    my = M[rows, Y]
    value = -pi1 * np.log(my) + w * (P * logratio).sum(axis=1)
    G = w * (logratio + 1.0 - w * P / np.maximum(M, P_FLOOR))
    G[rows, Y] -= pi1 * w / my
    Z = -w * math.log(w)
    return value / Z, G / Z


def _mse(P, Y):
    py = _py(P, Y)
    value = 1.0 - 2.0 * py + (P * P).sum(axis=1)
    G = 2.0 * P
    G[np.arange(len(Y)), Y] -= 2.0
    return value, G


def _agce(P, Y, a, q):
    py = _py(P, Y)
    return ((a + 1) ** q - (a + py) ** q) / q, _onehot_scaled(P, Y, -(a + py) ** (q - 1))


def _aul(P, Y, a, q):
    py = _py(P, Y)
    return ((a - py) ** q - (a - 1) ** q) / q, _onehot_scaled(P, Y, -(a - py) ** (q - 1))


def _prob_loss(family, prm, P, Y):
    if family == "ce":
        return _ce(P, Y)
    if family == "mae":
        return _mae(P, Y)
    if family == "nce":
        return _nce(P, Y)
    if family == "rll":
        return _rll(P, Y, prm["alpha"])
    if family == "gce":
        return _gce(P, Y, prm["q"])
    if family == "tgce":
        return _tgce(P, Y, prm["q"], prm["trunc"])
    if family == "sce":
        return _sce(P, Y, prm["alpha"], prm["A"])
    if family == "js":
        return _js(P, Y, prm["pi1"])
    if family == "mse":
        return _mse(P, Y)
    if family == "agce":
        return _agce(P, Y, prm["a"], prm["q"])
    if family == "aul":
        return _aul(P, Y, prm["a"], prm["q"])
    # active + passive combinations
    v_nce, g_nce = _nce(P, Y)
    if family == "nce_rce":
        v2, g2 = _mae(P, Y)
        v2, g2 = -prm["A"] / 2.0 * v2, -prm["A"] / 2.0 * g2
    elif family == "nce_agce":
        v2, g2 = _agce(P, Y, prm["a"], prm["q"])
    else:
        v2, g2 = _aul(P, Y, prm["a"], prm["q"])
    return prm["alpha"] * v_nce + prm["beta"] * v2, prm["alpha"] * g_nce + prm["beta"] * g2


def _margin_loss(family, c, F, Y):
    rows = np.arange(len(Y))
    H = F - F[rows, Y][:, None] + c
    H[rows, Y] = -np.inf
    if family == "cs":
        j = np.argmax(H, axis=1)
        hmax = H[rows, j]
        active = hmax > 0
        G = np.zeros_like(F)
        G[rows[active], j[active]] = 1.0
        G[rows[active], Y[active]] = -1.0
        return np.maximum(hmax, 0.0), G
    active = H > 0
    G = active.astype(float)
    G[rows, Y] = -active.sum(axis=1)
    return np.where(active, H, 0.0).sum(axis=1), G


def baseline_loss_batch(spec, F, Y):
    """Values ``(n,)`` and score gradients ``(n, K)`` for a batch."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Y = np.atleast_1d(np.asarray(Y)).astype(int)
    if spec.family in ("cs", "ww"):
        return _margin_loss(spec.family, spec.params["c"], F, Y)
    P = tempered_softmax(F, 1.0)
    value, Gp = _prob_loss(spec.family, spec.params, P, Y)
    Gf = P * (Gp - (Gp * P).sum(axis=1, keepdims=True))
    return value, Gf


def baseline_loss(spec, f, y):
    values, grads = baseline_loss_batch(spec, f, y)
    return LossGradPair(float(values[0]), grads[0])


def symmetry_sum(spec, f):
    """Sum of the loss over every possible label for one score vector."""
    f = np.asarray(f, dtype=float)
    K = f.size
    values, _ = baseline_loss_batch(spec, np.tile(f, (K, 1)), np.arange(K))
    return float(values.sum())
