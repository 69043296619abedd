"""KL-regularized maximization over the capped simplex and the LDR-k-KL loss.

The feasible set is ``Omega(k) = {p >= 0 : sum(p) <= 1, p_l <= 1/k}``. For
``k = 1`` the cap is inactive and the problem is the sub-simplex version of
the LDR-KL inner maximization.
"""
import math
from typing import NamedTuple

import numpy as np

from .ldr import LossGradPair, shifted_scores

_CAP_RTOL = 1e-12


class ProjectionResult(NamedTuple):
    p: np.ndarray
    a: int  # 1-based sorted position of the first uncapped coordinate
    objective: float


def omega_k_objective(p, q, lam):
    p = np.asarray(p, dtype=float)
    K = p.size
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(p > 0, p * np.log(K * p), 0.0)
    return float(p @ q - lam * ent.sum())


def _check(q, lam, k):
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite scores")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not 1 <= k <= q.size:
        raise ValueError(f"k must lie in [1, {q.size}], got {k}")
    return q


def omega_k_argmax(q, lam, k):
    """Exact maximizer of ``<p, q> - lam * sum p log(K p)`` over Omega(k).

    Sort once, accumulate tail sums of ``exp(q_[j]/lam - 1)`` from the
    smallest entry up, then pick the smallest cut ``a`` whose candidate
    keeps its first free coordinate under the cap. Everything after the
    sort is linear; the tail sums are shifted by the largest term so large
    ``q / lam`` cannot overflow.
    """
    q = _check(q, lam, k)
    K = q.size
    order = np.argsort(-q, kind="stable")
    logit = q[order] / lam - 1.0
    top = logit[0]
    with np.errstate(divide="ignore"):
        # log sum_{j>=a}; an underflowed tail gives -inf, which correctly
        # selects the 1/K branch below
        log_tail = np.log(np.cumsum(np.exp(logit[::-1] - top))[::-1]) + top

    a_idx = np.arange(K)  # a - 1
    with np.errstate(divide="ignore"):
        log_room = np.log(np.maximum(1.0 - a_idx / k, 0.0))
    # no room left (a > k) means no free mass, even when the tail underflowed
    with np.errstate(invalid="ignore"):
        log_coef = np.where(np.isneginf(log_room), -np.inf,
                            np.minimum(-math.log(K), log_room - log_tail))
    ok = logit + log_coef <= -math.log(k) + _CAP_RTOL
    a0 = int(np.argmax(ok))  # ok[k] (a = k + 1) is always true when k < K

    p_sorted = np.empty(K)
    p_sorted[:a0] = 1.0 / k
    p_sorted[a0:] = np.exp(logit[a0:] + log_coef[a0])
    p = np.empty(K)
    p[order] = p_sorted
    return ProjectionResult(p, a0 + 1, omega_k_objective(p, q, lam))


def _kl_project(logz, k, iters=200):
    """KL (Bregman) projection of ``exp(logz)`` onto Omega(k).

    The solution is ``min(1/k, exp(logz - nu))`` with the smallest
    ``nu >= 0`` that brings the total mass to at most one; ``nu`` is found
    by bisection. At ``nu = max(logz) + log K`` every entry is at most 1/K,
    which brackets the root.
    """
    cap = 1.0 / k

    def mass(nu):
        return np.minimum(cap, np.exp(logz - nu)).sum()

    if mass(0.0) <= 1.0:
        return np.minimum(cap, np.exp(logz))
    lo, hi = 0.0, max(0.0, float(logz.max())) + math.log(logz.size)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mass(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return np.minimum(cap, np.exp(logz - hi))


def omega_k_oracle(q, lam, k, iters=5000, step=0.5, stall=1e-13, trace=None):
    """Iterative reference solver for :func:`omega_k_argmax`.

    Mirror ascent in the entropy geometry with step ``step / lam`` and a KL
    projection onto Omega(k) per iterate. The objective is ``lam``-strongly
    concave and ``lam``-smooth relative to negative entropy, so each step
    contracts the distance to the optimum by ``1 - step`` and the objective
    never decreases. Runs until the objective gain falls below ``stall`` and
    the iterate stops moving.
    """
    q = _check(q, lam, k)
    K = q.size
    eta = step / lam
    p = np.full(K, min(1.0 / K, 1.0 / k))
    obj = omega_k_objective(p, q, lam)
    tiny = np.finfo(float).tiny
    for _ in range(iters):
        grad = q - lam * (np.log(K * p) + 1.0)
        p_new = np.maximum(_kl_project(np.log(p) + eta * grad, k), tiny)
        new_obj = omega_k_objective(p_new, q, lam)
        if trace is not None:
            trace.append(new_obj)
        moved = np.abs(p_new - p).max()
        p, gain, obj = p_new, new_obj - obj, new_obj
        if abs(gain) < stall and moved < 1e-14:
            break
    return p


def ldr_k_kl(f, y, lam, k, c=0.0):
    """LDR-k-KL value and gradient for one example."""
    u = shifted_scores(f, y, c)
    res = omega_k_argmax(u, lam, k)
    grad = res.p.copy()
    grad[y] -= res.p.sum()
    return LossGradPair(res.objective, grad)


def ldr_k_kl_batch(F, Y, lam, k, c=0.0):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Y = np.atleast_1d(Y)
    values = np.empty(len(Y))
    grads = np.empty_like(F)
    for i, (f, y) in enumerate(zip(F, Y)):
        values[i], grads[i] = ldr_k_kl(f, int(y), lam, k, c)
    return values, grads


def topk_svm(f, y, k, c=0.0):
    """Mean of the k largest entries of ``max(0, u)`` (lambda = 0 limit)."""
    u = shifted_scores(f, y, c)
    K = u.size
    if not 1 <= k <= K:
        raise ValueError(f"k must lie in [1, {K}], got {k}")
    h = np.maximum(u, 0.0)
    top = np.argsort(-h, kind="stable")[:k]
    grad = np.zeros(K)
    sel = top[h[top] > 0]
    grad[sel] = 1.0 / k
    grad[y] -= len(sel) / k  # u_y = 0 is never selected as positive
    return LossGradPair(float(h[top].sum() / k), grad)


def topk_svm_batch(F, Y, k, c=0.0):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Y = np.atleast_1d(Y)
    out = [topk_svm(f, int(y), k, c) for f, y in zip(F, Y)]
    return np.array([o.value for o in out]), np.array([o.grad for o in out])
