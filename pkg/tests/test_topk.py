import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldrloss import ldr, topk
from ldrloss.numerics import finite_diff_grad, relative_error


def _feasible(p, k):
    return np.all(p >= -1e-15) and p.sum() <= 1 + 1e-12 and np.all(p <= 1 / k + 1e-12)


def test_zero_scores_interior_solution():
    res = topk.omega_k_argmax(np.zeros(3), 1.0, 1)
    np.testing.assert_allclose(res.p, np.full(3, 1 / (3 * math.e)), atol=1e-15)
    assert res.p.sum() < 1
    np.testing.assert_allclose(topk.omega_k_oracle(np.zeros(3), 1.0, 1), res.p, atol=1e-9)


def test_constant_scores_uniform_clamp():
    # interior coordinate exp(q/lam - 1)/K exceeds 1/K for q/lam > 1
    q = np.full(6, 4.0)
    res = topk.omega_k_argmax(q, 0.5, 6)
    np.testing.assert_allclose(res.p, np.full(6, 1 / 6), atol=1e-15)
    np.testing.assert_allclose(topk.omega_k_oracle(q, 0.5, 6), res.p, atol=1e-9)


def test_capped_example_against_oracle():
    q = np.array([10.0, 0.0, 0.0])
    res = topk.omega_k_argmax(q, 0.5, 2)
    assert res.p[0] == pytest.approx(0.5, abs=1e-15)
    assert res.a == 2
    oracle = topk.omega_k_oracle(q, 0.5, 2)
    assert res.objective == pytest.approx(topk.omega_k_objective(oracle, q, 0.5), abs=1e-6)
    np.testing.assert_allclose(res.p, oracle, atol=1e-6)


def test_full_cap_zero_scores():
    res = topk.omega_k_argmax(np.zeros(5), 1.0, 5)
    np.testing.assert_allclose(res.p, np.full(5, 1 / (5 * math.e)))


def test_domain_errors():
    with pytest.raises(ValueError):
        topk.omega_k_argmax(np.zeros(3), 0.0, 1)
    with pytest.raises(ValueError):
        topk.omega_k_argmax(np.zeros(3), 1.0, 4)
    with pytest.raises(ValueError):
        topk.omega_k_argmax(np.array([0.0, np.inf]), 1.0, 1)


def test_oracle_objective_monotone():
    rng = np.random.default_rng(2)
    trace = []
    topk.omega_k_oracle(rng.normal(size=12), 0.3, 3, trace=trace)
    assert len(trace) > 2
    assert np.all(np.diff(trace) >= -1e-12)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 30), st.floats(0.05, 20.0), st.integers(0, 2**31))
def test_solver_feasible_and_optimal(K, lam, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(scale=rng.uniform(0.1, 10), size=K)
    k = int(rng.integers(1, K + 1))
    res = topk.omega_k_argmax(q, lam, k)
    assert _feasible(res.p, k)
    # any feasible perturbation direction cannot improve a concave optimum
    for _ in range(5):
        other = rng.dirichlet(np.ones(K)) * rng.uniform(0, 1)
        other = np.minimum(other, 1 / k)
        mix = 0.9 * res.p + 0.1 * other
        assert topk.omega_k_objective(mix, q, lam) <= res.objective + 1e-12


def test_huge_scores_do_not_overflow():
    res = topk.omega_k_argmax(np.array([1e4, -1e4, 0.0]), 0.01, 2)
    assert np.all(np.isfinite(res.p))
    assert _feasible(res.p, 2)


def test_ldr_k_kl_sum_constraint_case():
    # with every u well above lam, the sum constraint binds and no cap does (k=1);
    # the sub-simplex optimum then equals the simplex one, whose value is
    # LDR-KL; the DW vectors coincide
    rng = np.random.default_rng(7)
    for _ in range(50):
        K = int(rng.integers(2, 10))
        f = rng.normal(scale=0.3, size=K)
        y = int(rng.integers(K))
        lam = 0.2
        u = ldr.shifted_scores(f, y, 1.0)
        res = topk.omega_k_argmax(u, lam, 1)
        assert res.p.sum() == pytest.approx(1.0, abs=1e-12)
        v = topk.ldr_k_kl(f, y, lam, 1, 1.0).value
        assert v == pytest.approx(ldr.ldr_kl(f, y, lam, 1.0).value, abs=1e-10)
        np.testing.assert_allclose(res.p, ldr.dw_weights(f, y, lam, 1.0), atol=1e-12)


def test_ldr_k_kl_gradient_fd():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(500):
        K = int(rng.integers(2, 15))
        f = rng.normal(scale=2.0, size=K)
        y, k = int(rng.integers(K)), int(rng.integers(1, K + 1))
        lam = float(rng.uniform(0.1, 5))
        fun = lambda v: topk.ldr_k_kl(v, y, lam, k, 0.1).value  # noqa: E731
        fd = finite_diff_grad(fun, f)
        worst = max(worst, relative_error(topk.ldr_k_kl(f, y, lam, k, 0.1).grad, fd,
                                          1e-6 * max(1.0, abs(fun(f)))))
    assert worst <= 1e-5


def test_ldr_k_kl_confident_prediction_floor():
    f = np.array([50.0, 0.0, 0.0, 0.0])
    lam = 1.0
    res = topk.omega_k_argmax(ldr.shifted_scores(f, 0, 0.1), lam, 2)
    oracle = topk.omega_k_oracle(ldr.shifted_scores(f, 0, 0.1), lam, 2)
    np.testing.assert_allclose(res.p, oracle, atol=1e-9)
    assert np.all(res.p[1:] < 1e-20)
    assert 0 < res.p[0] < 0.5
    # value approaches the entropy floor of the lone free coordinate
    assert topk.ldr_k_kl(f, 0, lam, 2, 0.1).value == pytest.approx(1 / (4 * math.e), rel=1e-9)


def test_topk_svm_examples():
    v, g = topk.topk_svm(np.array([1.0, 3.0, 2.0]), 0, 2, 0.0)
    assert v == 1.5
    np.testing.assert_allclose(g, [-1.0, 0.5, 0.5])
    v, g = topk.topk_svm(np.array([5.0, 1.0, 2.0]), 0, 2, 0.1)
    assert v == 0.0 and not g.any()


def test_topk_svm_k1_matches_crammer_singer():
    rng = np.random.default_rng(4)
    for _ in range(100):
        K = int(rng.integers(2, 10))
        f, y = rng.normal(size=K), int(rng.integers(K))
        assert topk.topk_svm(f, y, 1, 0.3).value == ldr.ldr_kl(f, y, 0.0, 0.3).value


def test_batches_match_single():
    rng = np.random.default_rng(9)
    F, Y = rng.normal(size=(6, 5)), rng.integers(5, size=6)
    values, grads = topk.ldr_k_kl_batch(F, Y, 0.7, 2, 0.1)
    for i in range(6):
        single = topk.ldr_k_kl(F[i], Y[i], 0.7, 2, 0.1)
        assert values[i] == single.value
        np.testing.assert_array_equal(grads[i], single.grad)
    values, grads = topk.topk_svm_batch(F, Y, 3, 0.1)
    assert values.shape == (6,) and grads.shape == (6, 5)
