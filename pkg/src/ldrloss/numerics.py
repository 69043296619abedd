"""Stable exp-family kernels shared by every loss.

All kernels accept a single score vector of shape ``(K,)`` or a batch of
shape ``(n, K)``; reductions run over the last axis.
"""
import numpy as np

FD_STEP = 1e-5


def _check_finite(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite entries in score vector")
    return u


def log_sum_exp(u, scale=1.0):
    """Return ``scale * log(mean(exp(u / scale)))`` over the last axis.

    The mean (not the sum) is what the LDR-KL closed form uses, so a
    constant vector maps to that constant.
    """
    u = _check_finite(u)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    m = u.max(axis=-1, keepdims=True)
    z = np.exp((u - m) / scale).mean(axis=-1, keepdims=True)
    out = m + scale * np.log(z)
    return out[..., 0] if out.ndim > 1 else float(out[0])


def tempered_softmax(u, scale=1.0):
    u = _check_finite(u)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = np.exp((u - u.max(axis=-1, keepdims=True)) / scale)
    return z / z.sum(axis=-1, keepdims=True)


def kl_to_uniform(p):
    """KL(p, 1/K) = sum_k p_k log(K p_k), with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    K = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(K * p), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def finite_diff_grad(fun, x, h=FD_STEP):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.size):
        e.flat[i] = h
        grad.flat[i] = (fun(x + e) - fun(x - e)) / (2 * h)
        e.flat[i] = 0.0
    return grad


def relative_error(a, b, floor=1e-8):
    """Max-norm relative discrepancy used by every gradient check."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)
