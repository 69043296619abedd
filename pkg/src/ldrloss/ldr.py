"""LDR-KL and adaptive ALDR-KL losses with analytic score gradients.

Every loss here is a function of the margin-shifted scores
``u_k = f_k - f_y + c * [k != y]``. The DW vector maximizing
``<p, u> - lam * KL(p, 1/K)`` over the simplex is ``softmax(u / lam)``, and
the gradient with respect to ``f`` is ``p - e_y`` for every ``lam`` in
``[0, inf]`` (envelope theorem; ``u_y`` is identically zero).
"""
import math
from typing import NamedTuple

import numpy as np

from .numerics import kl_to_uniform, log_sum_exp, tempered_softmax


class LossGradPair(NamedTuple):
    value: float
    grad: np.ndarray


def _as_batch(f, y):
    F = np.atleast_2d(np.asarray(f, dtype=float))
    Y = np.atleast_1d(np.asarray(y)).astype(int)
    K = F.shape[1]
    if K < 2:
        raise ValueError("need at least two classes")
    if np.any((Y < 0) | (Y >= K)):
        raise IndexError(f"label out of range [0, {K})")
    return F, Y


def _one_hot(idx, K):
    out = np.zeros((len(idx), K))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def shifted_scores(f, y, c=0.0):
    """``u_k = f_k - f_y + c [k != y]``; batched when ``f`` is 2-D."""
    if c < 0:
        raise ValueError("margin must be non-negative")
    F, Y = _as_batch(f, y)
    rows = np.arange(len(Y))
    U = F - F[rows, Y][:, None] + c
    U[rows, Y] = 0.0
    return U if np.ndim(f) == 2 else U[0]


def _weights_from_shifted(U, lam):
    K = U.shape[1]
    if lam == 0:
        return _one_hot(np.argmax(U, axis=1), K)
    if math.isinf(lam):
        return np.full_like(U, 1.0 / K)
    return tempered_softmax(U, lam)


def _zero_limit(U):
    """Limit of ``softmax(U / lam)`` as ``lam -> 0+``: uniform over tied maxima.

    This is the DW vector that decides the one-sided slope of the ALDR
    objective at ``lam = 0``; the tie-broken one-hot would overstate the KL
    term whenever several classes share the maximum.
    """
    top = U == U.max(axis=1, keepdims=True)
    return top / top.sum(axis=1, keepdims=True)


def dw_weights(f, y, lam, c=0.0):
    """Worst-case distributional weights for the KL-regularized inner max."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    U = np.atleast_2d(shifted_scores(f, y, c))
    P = _weights_from_shifted(U, lam)
    return P if np.ndim(f) == 2 else P[0]


def ldr_kl_batch(F, Y, lam, c=0.0):
    """Values ``(n,)`` and gradients ``(n, K)`` of LDR-KL on a batch."""
    if lam < 0 or math.isnan(lam):
        raise ValueError(f"lambda must be in [0, inf], got {lam}")
    F, Y = _as_batch(F, Y)
    if not np.all(np.isfinite(F)):
        raise ValueError("non-finite scores")
    K = F.shape[1]
    U = shifted_scores(F, Y, c)
    if lam == 0:
        values = U.max(axis=1)  # u_y = 0, so this is the CS hinge
        P = _weights_from_shifted(U, lam)
    elif math.isinf(lam):
        values = U.mean(axis=1)
        P = np.full_like(U, 1.0 / K)
    else:
        # one pass shared by the value and the DW vector
        m = U.max(axis=1, keepdims=True)
        with np.errstate(over="ignore"):  # tiny lam: far entries go to exp(-inf) = 0
            Z = np.exp((U - m) / lam)
        total = Z.sum(axis=1, keepdims=True)
        values = (m + lam * (np.log(total) - math.log(K)))[:, 0]
        P = Z / total
    grads = P - _one_hot(Y, K)
    return np.atleast_1d(values), grads


def ldr_kl(f, y, lam, c=0.0):
    values, grads = ldr_kl_batch(f, y, lam, c)
    return LossGradPair(float(values[0]), grads[0])


def aldr_lambda_update(p, lambda0, alpha):
    """Closed-form maximizer in lambda for a fixed DW vector, clipped at 0."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return np.maximum(lambda0 - kl_to_uniform(p) / alpha, 0.0)


def _aldr_objective(u, lam, lambda0, alpha):
    smooth = float(u.max()) if lam == 0 else log_sum_exp(u, lam)
    return smooth - 0.5 * alpha * (lam - lambda0) ** 2


def aldr_kl_exact(f, y, lambda0, alpha, c=0.0, tol=1e-8):
    """Solve the one-dimensional concave problem over lambda exactly.

    ``g(lam) = lam * log mean exp(u / lam) - alpha/2 (lam - lambda0)^2`` has
    derivative ``-KL(p_lam, 1/K) - alpha (lam - lambda0)``, which is
    non-increasing, so the maximizer on ``[0, lambda0]`` is found by
    bisection on its sign. Returns ``(value, lambda_star, p_star)``.
    """
    if alpha <= 0 or lambda0 <= 0:
        raise ValueError("alpha and lambda0 must be positive")
    u = shifted_scores(f, y, c)

    def slope(lam):
        p = tempered_softmax(u, lam) if lam > 0 else _zero_limit(u[None])[0]
        return -kl_to_uniform(p) - alpha * (lam - lambda0)

    if slope(0.0) <= 0:
        lam_star = 0.0
    else:
        lo, hi = 0.0, float(lambda0)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0:
                lo = mid
            else:
                hi = mid
        lam_star = 0.5 * (lo + hi)
    p_star = _weights_from_shifted(u[None], lam_star)[0]
    return _aldr_objective(u, lam_star, lambda0, alpha), lam_star, p_star


def aldr_kl_exact_batch(F, Y, lambda0, alpha, c=0.0, tol=1e-8):
    """Row-wise :func:`aldr_kl_exact` with one vectorized bisection.

    Returns ``(values, lambda_star, grads)``; the gradient is ``p* - e_y``
    because the maximizing lambda does not need to be differentiated.
    """
    if alpha <= 0 or lambda0 <= 0:
        raise ValueError("alpha and lambda0 must be positive")
    F, Y = _as_batch(F, Y)
    U = shifted_scores(F, Y, c)
    n = len(Y)

    def slope(lams):
        P = _tempered_rows(U, lams)
        zero = lams == 0
        if np.any(zero):
            P[zero] = _zero_limit(U[zero])
        return -kl_to_uniform(P) - alpha * (lams - lambda0)

    lo, hi = np.zeros(n), np.full(n, float(lambda0))
    interior = slope(lo) > 0
    hi[~interior] = 0.0
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        up = slope(mid) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    lam = np.where(interior, 0.5 * (lo + hi), 0.0)
    P = _tempered_rows(U, lam)
    values = U.max(axis=1)
    pos = lam > 0
    if np.any(pos):
        values[pos] = log_sum_exp(U[pos] / lam[pos, None], 1.0) * lam[pos]
    values -= 0.5 * alpha * (lam - lambda0) ** 2
    return values, lam, P - _one_hot(Y, F.shape[1])


def aldr_kl_step_batch(F, Y, lambda_prev, lambda0, alpha, c=0.0):
    """One alternating update per sample: DW vector at the stored lambda,
    then the lambda update, then the gradient at the new lambda.

    ``lambda_prev`` is an array of shape ``(n,)``. Returns
    ``(values, lambda_next, grads)`` where ``values`` is the LDR-KL value at
    ``lambda_next`` (without the quadratic prior term).
    """
    F, Y = _as_batch(F, Y)
    lambda_prev = np.broadcast_to(np.asarray(lambda_prev, dtype=float), (len(Y),))
    if np.any(lambda_prev < 0):
        raise ValueError("stored lambda must be >= 0")
    U = shifted_scores(F, Y, c)
    P = _tempered_rows(U, lambda_prev)
    lambda_next = np.atleast_1d(aldr_lambda_update(P, lambda0, alpha))
    P_next = _tempered_rows(U, lambda_next)
    grads = P_next - _one_hot(Y, F.shape[1])
    values = U.max(axis=1)
    pos = lambda_next > 0
    if np.any(pos):
        values[pos] = log_sum_exp(U[pos] / lambda_next[pos, None], 1.0) * lambda_next[pos]
    return values, lambda_next, grads


def _tempered_rows(U, lams):
    """Row-wise softmax(U / lam) with lam = 0 rows mapped to argmax one-hot."""
    P = _one_hot(np.argmax(U, axis=1), U.shape[1])
    pos = lams > 0
    if np.any(pos):
        P[pos] = tempered_softmax(U[pos] / lams[pos, None], 1.0)
    return P


def aldr_kl_step(f, y, lambda_prev, lambda0, alpha, c=0.0):
    _, lam_next, grads = aldr_kl_step_batch(f, y, [lambda_prev], lambda0, alpha, c)
    return float(lam_next[0]), grads[0]
