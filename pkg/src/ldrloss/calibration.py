"""Numerical checks of conditional-risk minimizers at small K.

For a fixed class distribution ``q`` the conditional risk of a loss is
``R(f) = sum_l q_l * loss(f, l)``. The minimizer is found by gradient
descent and compared with closed-form optima and ordering properties.
"""
import math
from dataclasses import dataclass

import numpy as np

from .registry import make_loss

_ARMIJO = 1e-4


@dataclass
class RiskMinResult:
    f_star: np.ndarray
    risk: float
    converged: bool
    iterations: int
    grad_norm: float


def conditional_risk(loss, f, q):
    """``(R(f), dR/df)`` for a batch loss evaluator ``loss(F, Y)``."""
    K = len(q)
    values, grads = loss(np.tile(f, (K, 1)), np.arange(K))
    return float(q @ values), q @ grads


def _project_ball(f, B):
    norm = np.linalg.norm(f)
    return f if norm <= B else f * (B / norm)


def minimize_conditional_risk(loss, q, constraint=None, tol=1e-8, max_iters=20000, f0=None,
                              metric=None):
    """Minimize the conditional risk of ``loss`` at ``q``.

    ``constraint`` is ``None`` or ``("l2_ball", B)``. Without a constraint
    every iterate is centered to sum zero, which removes the flat direction
    shared by all losses that only see score differences. Steps start from a
    Barzilai-Borwein guess and are backtracked until the Armijo condition
    holds. Convergence is declared when the (projected) gradient norm drops
    to ``tol``; otherwise ``converged`` is False.

    Losses behind a softmax head are badly conditioned in ``f`` once some
    probabilities get small, because every partial derivative carries a
    factor ``p_i``. ``metric="softmax"`` divides the gradient by ``softmax(f)``
    (a diagonal variable metric), which undoes that factor; ``"softmax2"``
    divides by its square, which suits losses whose probability-space
    gradient itself vanishes at the optimum (squared error). The line search
    and the stopping test always use the plain gradient.
    """
    q = np.asarray(q, dtype=float)
    K = q.size
    power = {None: 0, "softmax": 1, "softmax2": 2}.get(metric)
    if power is None:
        raise ValueError(f"unknown metric {metric!r}")
    if constraint is None:
        radius = None
    elif constraint[0] == "l2_ball" and constraint[1] > 0:
        radius = float(constraint[1])
    else:
        raise ValueError(f"unsupported constraint {constraint!r}")

    def proj(v):
        return v - v.mean() if radius is None else _project_ball(v, radius)

    f = proj(np.zeros(K) if f0 is None else np.asarray(f0, dtype=float).copy())
    risk, g = conditional_risk(loss, f, q)
    step, f_old, g_old = 1.0, None, None
    gnorm = math.inf
    for it in range(1, max_iters + 1):
        mapping = f - proj(f - g)  # projected gradient at unit step
        gnorm = float(np.linalg.norm(mapping))
        if gnorm <= tol:
            return RiskMinResult(f, risk, True, it - 1, gnorm)
        if metric is not None:
            step = 2.0 * step if f_old is not None else 1.0
        elif f_old is not None:
            s, d = f - f_old, g - g_old
            sd = float(s @ d)
            if sd > 1e-300:
                step = float(s @ s) / sd
        step = min(max(step, 1e-12), 1e6)
        direction = g if metric is None else g / _softmax(f) ** power
        while True:
            f_new = proj(f - step * direction)
            new_risk, new_g = conditional_risk(loss, f_new, q)
            move = f_new - f
            if new_risk <= risk + _ARMIJO * (g @ move) or step < 1e-14:
                break
            step *= 0.5
        f_old, g_old = f, g
        f, risk, g = f_new, new_risk, new_g
    return RiskMinResult(f, risk, False, max_iters, gnorm)


def rank_preserving(f, q, tol=1e-6):
    """True iff ``q_i < q_j - tol`` always implies ``f_i < f_j``."""
    f, q = np.asarray(f, dtype=float), np.asarray(q, dtype=float)
    ordered = q[:, None] < q[None, :] - tol
    i, j = np.nonzero(ordered)
    return bool(np.all(f[i] < f[j]))


def mse_optimum_oracle(q):
    """The squared-error risk over the simplex is minimized by ``q`` itself."""
    return np.asarray(q, dtype=float).copy()


def gce_optimum_oracle(q, q_loss):
    r = np.asarray(q, dtype=float) ** (1.0 / (1.0 - q_loss))
    return r / r.sum()


def ball_optimum_oracle(q, B):
    a = len(q) * np.asarray(q, dtype=float) - 1.0
    return B * a / np.linalg.norm(a)


def sce_affine_fit(q, alpha=0.5, A=-4.0, tol=1e-10):
    """Fit ``1/p*_i = s / q_i + b`` at the numerical SCE optimum.

    Returns ``(max_residual, slope, intercept)``, with the residual taken
    relative to ``max(1/p*)``, or ``None`` when some ``q_i`` is zero (the
    optimum then sits on the boundary and the relation does not apply).
    """
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0) or not 0 < alpha <= 1:
        return None
    res = minimize_conditional_risk(make_loss("sce", alpha=alpha, A=A), q, tol=tol,
                                    metric="softmax")
    p = np.exp(res.f_star - res.f_star.max())
    inv_p = p.sum() / p
    design = np.column_stack([1.0 / q, np.ones_like(q)])
    (slope, intercept), *_ = np.linalg.lstsq(design, inv_p, rcond=None)
    resid = np.abs(design @ (slope, intercept) - inv_p).max() / inv_p.max()
    return float(resid), float(slope), float(intercept)


def sce_optimum_check(q, alpha=0.5, A=-4.0, threshold=1e-3):
    """True/False for the affine relation, ``None`` when not applicable."""
    fit = sce_affine_fit(q, alpha, A)
    return None if fit is None else fit[0] <= threshold


def argmax_restarts(loss, q, restarts=5, seed=0, scale=1.0, max_iters=300):
    """Argmax of the minimizer from several seeded random starts.

    Piecewise-linear losses have non-unique minimizers, so only the top
    class is compared. Each start ``f0`` is also rerun from ``2 * f0``.
    """
    rng = np.random.default_rng(seed)
    tops = []
    for _ in range(restarts):
        f0 = scale * rng.standard_normal(len(q))
        for start in (f0, 2.0 * f0):
            res = minimize_conditional_risk(loss, q, f0=start, max_iters=max_iters)
            tops.append(int(np.argmax(res.f_star)))
    return tops


def random_q(rng, K, min_gap=0.02):
    """A point on the simplex whose sorted entries differ by at least ``min_gap``."""
    while True:
        q = rng.dirichlet(np.ones(K))
        if np.diff(np.sort(q)).min() >= min_gap:
            return q


@dataclass
class ClaimRow:
    claim: str
    checked: int
    passed: int
    inconclusive: int = 0
    worst: float = 0.0

    @property
    def ok(self):
        return self.passed + self.inconclusive == self.checked and self.passed > 0


def run_calibration(n_q=200, seed=0, k_range=(3, 8)):
    """Run every calibration claim and return one ClaimRow per claim."""
    rng = np.random.default_rng(seed)
    qs = [random_q(rng, int(rng.integers(k_range[0], k_range[1] + 1))) for _ in range(n_q)]
    rows = []

    for lam in (0.1, 1.0, 10.0):
        for c in (0.0, 0.1):
            loss = make_loss("ldr_kl", lam=lam, c=c)
            passed = 0
            for q in qs:
                res = minimize_conditional_risk(loss, q)
                passed += res.converged and rank_preserving(res.f_star, q)
            rows.append(ClaimRow(f"ldr_kl_rank_preserving lam={lam:g} c={c:g}", n_q, passed))

    def closeness(name, loss, oracle, tol, constraint=None, metric=None):
        worst, passed = 0.0, 0
        for q in qs:
            res = minimize_conditional_risk(loss, q, constraint=constraint, metric=metric)
            got = res.f_star if constraint else _softmax(res.f_star)
            err = float(np.abs(got - oracle(q)).max())
            worst = max(worst, err)
            passed += res.converged and err <= tol
        rows.append(ClaimRow(name, n_q, passed, worst=worst))

    closeness("ldr_kl_softmax_equals_q lam=1 c=0", make_loss("ldr_kl", lam=1.0, c=0.0),
              lambda q: q, 1e-4)
    closeness("gce_optimum_power q=0.5", make_loss("gce", q=0.5),
              lambda q: gce_optimum_oracle(q, 0.5), 1e-3, metric="softmax")
    closeness("mse_optimum_equals_q", make_loss("mse"), mse_optimum_oracle, 1e-4,
              metric="softmax2")
    closeness("ldr_kl_inf_ball_optimum B=1", make_loss("ldr_kl", lam=math.inf, c=0.1),
              lambda q: ball_optimum_oracle(q, 1.0), 1e-5, constraint=("l2_ball", 1.0))

    sce_pass = sum(bool(sce_optimum_check(q)) for q in qs[:50])
    rows.append(ClaimRow("sce_affine_relation alpha=0.5", 50, sce_pass))

    mae = make_loss("mae")
    mae_pass = 0
    for q in qs[:50]:
        res = minimize_conditional_risk(mae, q, max_iters=500)
        mae_pass += int(np.argmax(res.f_star)) == int(np.argmax(q))
    rows.append(ClaimRow("mae_top1_matches_argmax_q", 50, mae_pass))

    cs = make_loss("ldr_kl", lam=0.0, c=0.1)
    agree, inconclusive = 0, 0
    for i, q in enumerate(qs[:20]):
        tops = argmax_restarts(cs, q, seed=seed + i)
        if len(set(tops)) == 1:
            agree += tops[0] == int(np.argmax(q))
        else:
            inconclusive += 1
    rows.append(ClaimRow("cs_argmax_scale_invariant", 20, agree, inconclusive))
    return rows


def _softmax(f):
    e = np.exp(f - f.max())
    return e / e.sum()
