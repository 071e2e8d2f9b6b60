import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaptapg import (
    BoxIndicator,
    CompositeProblem,
    L1Penalty,
    LeastSquares,
    Logistic,
    MaskedSquares,
    NuclearPenalty,
    Quadratic,
    SVMDual,
    ZeroPenalty,
    estimate_L,
    gradient_map,
    prox_box,
    prox_l1,
    prox_nuclear,
    reduced_gradient,
)
from adaptapg.problems import EvaluationError, content_hash
from adaptapg.verification import finite_diff_grad

X3 = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
Y3 = np.array([1.0, -1.0, 1.0])

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_logistic_value_and_gradient_match_high_precision_oracle():
    h = Logistic(X3, Y3, 0.1)
    val, g = h.value_and_grad(np.array([0.3, -0.2]))
    # 40-digit mpmath evaluation
    assert val == pytest.approx(2.8131916332022879996, rel=1e-14)
    np.testing.assert_allclose(g, [1.5420498275485179984, -2.0839697823108924046], rtol=1e-13)


def test_logistic_constant_covers_hessian():
    h = Logistic(X3, Y3, 0.1)
    # top eigenvalue of X^T X from a dense eigensolver
    assert h.L >= 0.25 * 10.360076627227638 + 0.2
    assert h.L <= 1.02 * (0.25 * 10.360076627227638 + 0.2)


def test_logistic_is_stable_for_large_margins():
    h = Logistic(X3, Y3, 0.0)
    val, g = h.value_and_grad(np.array([1e4, 1e4]))
    assert math.isfinite(val) and np.all(np.isfinite(g))


def test_svm_dual_value():
    h = SVMDual(X3, Y3, C=2.0)
    assert h.value(np.array([0.2, 0.7, 1.0])) == pytest.approx(-0.77, abs=1e-14)


def test_least_squares_constant_matches_eigensolver(gen):
    A = gen.standard_normal((40, 25))
    lmax = np.linalg.eigvalsh(A.T @ A).max()
    h = LeastSquares(A, gen.standard_normal(40))
    assert lmax <= h.L <= 1.011 * lmax


def test_estimate_L_sparse_and_plain_operator(gen):
    A = gen.standard_normal((30, 30))
    S = A @ A.T
    lmax = np.linalg.eigvalsh(S).max()
    assert estimate_L(S, safety=1.0, tol=1e-12) == pytest.approx(lmax, rel=1e-6)
    Xs = sp.random(50, 20, density=0.3, random_state=0, format="csr")
    ref = np.linalg.eigvalsh((Xs.T @ Xs).toarray()).max()
    assert estimate_L(Xs, gram=True, safety=1.0, tol=1e-12) == pytest.approx(ref, rel=1e-6)


def test_estimate_L_reports_stagnation():
    # +-1 eigenvalues make the Rayleigh quotient oscillate
    with pytest.raises(RuntimeError):
        estimate_L(np.diag([1.0, -1.0]) @ np.array([[0.0, 1.0], [1.0, 0.0]]), max_iter=5,
                   tol=0.0)


@pytest.mark.parametrize("make", [
    lambda g: Logistic(g.standard_normal((20, 6)), np.sign(g.standard_normal(20)), 0.3),
    lambda g: LeastSquares(g.standard_normal((20, 6)), g.standard_normal(20)),
    lambda g: SVMDual(g.standard_normal((6, 4)), np.sign(g.standard_normal(6)), 1.5),
    lambda g: Quadratic(np.array([1.0, 3.0, 7.0, 2.0, 5.0, 9.0]), g.standard_normal(6), 1.5,
                        basis=np.linalg.qr(g.standard_normal((6, 6)))[0]),
])
def test_gradients_match_finite_differences(make, gen):
    h = make(gen)
    n = h.dim
    for _ in range(3):
        x = gen.standard_normal(n)
        np.testing.assert_allclose(h.grad(x), finite_diff_grad(h.value, x), rtol=1e-4,
                                   atol=1e-6)


def test_masked_squares_gradient_and_constant(gen):
    h = MaskedSquares((4, 5), [0, 1, 3], [2, 4, 0], [1.0, -2.0, 0.5])
    x = gen.standard_normal(20)
    np.testing.assert_allclose(h.grad(x), finite_diff_grad(h.value, x), atol=1e-6)
    assert h.L == 2.0 and h.dim == 20


@pytest.mark.parametrize("make", [
    lambda g: Logistic(g.standard_normal((30, 8)), np.sign(g.standard_normal(30)), 0.1),
    lambda g: LeastSquares(g.standard_normal((30, 8)), g.standard_normal(30)),
    lambda g: SVMDual(g.standard_normal((8, 5)), np.sign(g.standard_normal(8)), 1.0),
])
def test_descent_lemma(make, gen):
    h = make(gen)
    for _ in range(20):
        x, y = gen.standard_normal(h.dim), gen.standard_normal(h.dim)
        fx, gx = h.value_and_grad(x)
        d = y - x
        assert h.value(y) <= fx + gx @ d + 0.5 * h.L * d @ d + 1e-9 * (1 + abs(fx))


def test_quadratic_excess_has_no_cancellation():
    q = Quadratic(np.array([1.0, 100.0]), np.array([1.0, 2.0]), h_star=1e8)
    x = np.array([1.0 + 1e-9, 2.0])
    assert q.excess(x) == pytest.approx(0.5e-18, rel=1e-12)


# ----------------------------------------------------------------------------- prox


def test_prox_l1_known_values():
    np.testing.assert_array_equal(prox_l1(np.array([3.0, -0.5, -2.0, 0.0]), 1.0),
                                  [2.0, 0.0, -1.0, 0.0])
    with pytest.raises(ValueError):
        prox_l1(np.ones(2), -1.0)


@settings(max_examples=200, deadline=None)
@given(v=finite, t=st.floats(0, 1e3))
def test_prox_l1_optimality(v, t):
    p = prox_l1(np.array([v]), t)[0]
    # 0 in (p - v) + t * d|p|
    if p != 0:
        assert (p - v) + t * math.copysign(1.0, p) == pytest.approx(0.0, abs=1e-9 * (1 + abs(v)))
    else:
        assert abs(v) <= t + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite),
       st.floats(0, 10))
def test_prox_l1_is_nonexpansive(a, b, t):
    assert np.linalg.norm(prox_l1(a, t) - prox_l1(b, t)) <= np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12


def test_prox_nuclear_shrinks_singular_values(gen):
    M = gen.standard_normal((6, 4))
    s = np.linalg.svd(M, compute_uv=False)
    P = prox_nuclear(M, 0.7)
    np.testing.assert_allclose(np.linalg.svd(P, compute_uv=False), np.maximum(s - 0.7, 0),
                               atol=1e-12)
    flat = prox_nuclear(M.ravel(), 0.7, shape=(6, 4))
    np.testing.assert_allclose(flat, P.ravel())
    with pytest.raises(ValueError):
        prox_nuclear(M.ravel(), 0.7)


def test_prox_nuclear_svd_failure_is_reported():
    with pytest.raises(EvaluationError):
        prox_nuclear(np.full((3, 3), np.nan), 1.0)


def test_prox_nuclear_subgradient_condition(gen):
    # V - P must lie in t * subdifferential of ||.||_* at P
    V = gen.standard_normal((8, 8))
    t = 1.3
    P = prox_nuclear(V, t)
    U, s, Wt = np.linalg.svd(P)
    r = int(np.sum(s > 1e-10))
    G = (V - P) / t
    np.testing.assert_allclose(U[:, :r].T @ G @ Wt[:r].T, np.eye(r), atol=1e-10)
    assert np.linalg.norm(G, 2) <= 1 + 1e-10


def test_prox_box_projection():
    np.testing.assert_array_equal(prox_box(np.array([-1.0, 0.3, 2.0]), 0.0, 1.0), [0.0, 0.3, 1.0])
    with pytest.raises(ValueError):
        prox_box(np.zeros(1), 1.0, 0.0)


def test_penalty_prox_uses_threshold_over_step():
    p = L1Penalty(2.0)
    np.testing.assert_allclose(p.prox(np.array([3.0]), 4.0), [2.5])
    assert p(np.array([1.0, -2.0])) == 6.0
    assert BoxIndicator()(np.array([2.0])) == math.inf
    assert NuclearPenalty(1.0, (2, 2))(np.array([3.0, 0.0, 0.0, -4.0])) == pytest.approx(7.0)


# ----------------------------------------------------------------------------- composite


def _lasso(gen):
    A = gen.standard_normal((15, 10))
    return CompositeProblem(LeastSquares(A, gen.standard_normal(15)), L1Penalty(0.5))


def test_gradient_map_fixed_point_at_minimiser():
    q = Quadratic(np.array([1.0, 4.0]), np.array([2.0, -1.0]))
    p = CompositeProblem(q)
    np.testing.assert_allclose(gradient_map(p, q.x_star, p.L), q.x_star)
    np.testing.assert_allclose(reduced_gradient(p, q.x_star, p.L), 0.0)
    with pytest.raises(ValueError):
        gradient_map(p, q.x_star, 0.0)


def test_reduced_gradient_equals_gradient_without_penalty(gen):
    p = _lasso(gen)
    p0 = CompositeProblem(p.smooth, ZeroPenalty())
    y = gen.standard_normal(10)
    np.testing.assert_allclose(reduced_gradient(p0, y, p.L), p.smooth.grad(y))


def test_gradient_map_step_decreases_objective(gen):
    p = _lasso(gen)
    for _ in range(10):
        y = gen.standard_normal(10)
        t = gradient_map(p, y, p.L)
        g = reduced_gradient(p, y, p.L)
        # sufficient decrease f(T) <= f(y) - ||g||^2 / (2L)
        assert p.value(t) <= p.value(y) - g @ g / (2 * p.L) + 1e-10


def test_composite_checks_reference_consistency():
    q = Quadratic(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        CompositeProblem(q, f_star=1.0, x_star=np.array([0.0]))
    p = CompositeProblem(q, f_star=0.0, x_star=np.array([0.0]))
    assert p.dim == 1 and p.mu == 1.0


def test_non_finite_oracle_raises():
    from adaptapg.problems import _checked_grad
    p = CompositeProblem(LeastSquares(np.ones((1, 1)), np.ones(1), L=1.0))
    with pytest.raises(EvaluationError):
        _checked_grad(p, np.array([np.inf]))


def test_content_hash_binds_to_data(gen):
    A = gen.standard_normal((5, 3))
    b = gen.standard_normal(5)
    p1 = CompositeProblem(LeastSquares(A, b), L1Penalty(1.0))
    p2 = CompositeProblem(LeastSquares(A.copy(), b.copy()), L1Penalty(1.0))
    p3 = CompositeProblem(LeastSquares(A, b), L1Penalty(1.0 + 1e-12))
    assert content_hash(p1) == content_hash(p2) != content_hash(p3)


def test_invalid_constants_rejected():
    with pytest.raises(ValueError):
        LeastSquares(np.ones((2, 2)), np.ones(2), L=0.0)
    with pytest.raises(ValueError):
        Logistic(np.ones((2, 2)), np.ones(2), -1.0)
    with pytest.raises(ValueError):
        SVMDual(np.ones((2, 2)), np.ones(2), C=0.0)
