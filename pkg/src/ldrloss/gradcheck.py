"""Analytic-versus-finite-difference gradient suites for every loss."""
import math
from dataclasses import dataclass

import numpy as np

from . import baselines, ldr, topk
from .numerics import FD_STEP, finite_diff_grad, relative_error
from .registry import make_loss

TOLERANCE = 1e-5
# With h = 1e-5 the central difference carries round-off of order
# eps * |loss| / h. Gradients smaller than ERROR_FLOOR * max(1, |loss|) are
# therefore compared in absolute rather than relative terms.
ERROR_FLOOR = 1e-6
# Piecewise-linear losses: a kink within a few steps of the test point makes
# the central difference meaningless. Such draws are detected by comparing
# two step sizes and redrawn.
_KINK_PROBE = 1e-6


@dataclass
class SuiteResult:
    name: str
    instances: int
    worst: float
    redrawn: int

    @property
    def ok(self):
        return self.worst <= TOLERANCE


def _instance(rng, k_min=2, k_max=30):
    """Random scores with K in [k_min, k_max] and a random label."""
    K = int(rng.integers(k_min, k_max + 1))
    f = rng.normal(scale=rng.uniform(0.5, 3.0), size=K)
    return f, int(rng.integers(K)), K


def _check(name, value_fn, grad_fn, rng, n, step=FD_STEP, piecewise=False):
    worst, redrawn, done = 0.0, 0, 0
    while done < n:
        f, y, K = _instance(rng)
        fun = lambda v: value_fn(v, y)  # noqa: E731
        floor = ERROR_FLOOR * max(1.0, abs(fun(f)))
        fd = finite_diff_grad(fun, f, step)
        if piecewise and relative_error(fd, finite_diff_grad(fun, f, step / 10),
                                        floor) > _KINK_PROBE:
            redrawn += 1
            continue
        worst = max(worst, relative_error(grad_fn(f, y), fd, floor))
        done += 1
    return SuiteResult(name, n, worst, redrawn)


def _ldr_suite(lam, c=0.1):
    return dict(name=f"ldr_kl lam={lam:g}",
                value_fn=lambda f, y: ldr.ldr_kl(f, y, lam, c).value,
                grad_fn=lambda f, y: ldr.ldr_kl(f, y, lam, c).grad,
                piecewise=lam == 0)


PIECEWISE = {"cs", "ww", "tgce"}
# Softmax-head losses at temperature one saturate with tiny gradients, where
# round-off dominates at h = 1e-5; their third derivatives carry the same
# small factors, so the larger step costs no truncation accuracy.
BASELINE_STEP = 1e-4


def run_suites(n=200, seed=0):
    """One SuiteResult per loss configuration, ``n`` random instances each."""
    rng = np.random.default_rng(seed)
    results = [_check(rng=rng, n=n, **_ldr_suite(lam)) for lam in (0.1, 1.0, 10.0, math.inf, 0.0)]
    results += [_aldr_check(lambda0, rng, n) for lambda0 in (1.0, 10.0)]

    for k in (1, 2, 3):
        results.append(_check(f"ldr_k_kl k={k}",
                              lambda f, y, k=k: topk.ldr_k_kl(f, y, 1.0, min(k, len(f)), 0.1).value,
                              lambda f, y, k=k: topk.ldr_k_kl(f, y, 1.0, min(k, len(f)), 0.1).grad,
                              rng, n))
    results.append(_check("topk_svm k=2",
                          lambda f, y: topk.topk_svm(f, y, min(2, len(f)), 0.1).value,
                          lambda f, y: topk.topk_svm(f, y, min(2, len(f)), 0.1).grad,
                          rng, n, piecewise=True))

    for family in baselines.FAMILIES:
        loss = make_loss(family)
        results.append(_check(family,
                              lambda f, y, L=loss: float(L(f[None], [y])[0][0]),
                              lambda f, y, L=loss: L(f[None], [y])[1][0], rng, n,
                              step=BASELINE_STEP, piecewise=family in PIECEWISE))
    return results


def _aldr_check(lambda0, rng, n, c=0.1):
    """ALDR-KL step gradient against differences of LDR-KL at the new lambda."""
    worst = 0.0
    for _ in range(n):
        f, y, K = _instance(rng)
        alpha = 2.0 * math.log(K) / lambda0
        lam_next, grad = ldr.aldr_kl_step(f, y, lambda0, lambda0, alpha, c)
        fun = lambda v: ldr.ldr_kl(v, y, lam_next, c).value  # noqa: E731
        floor = ERROR_FLOOR * max(1.0, abs(fun(f)))
        worst = max(worst, relative_error(grad, finite_diff_grad(fun, f), floor))
    return SuiteResult(f"aldr_kl step lambda0={lambda0:g}", n, worst, 0)
