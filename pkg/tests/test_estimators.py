import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptapg import CompositeProblem, Converged, MuEstimator, Quadratic, hat_mu, mu_local
from adaptapg.estimators import degeneracy_threshold, hat_mu_from
from adaptapg.verification import make_spectral


def _quad(eigs, x_star=None, f_star=0.0):
    eigs = np.asarray(eigs, dtype=float)
    x_star = np.zeros(eigs.size) if x_star is None else np.asarray(x_star, dtype=float)
    return CompositeProblem(Quadratic(eigs, x_star, f_star), f_star=f_star, x_star=x_star)


def test_hat_mu_hand_computed():
    # g = (1, 4), gap = 2.5 -> 17 / 5
    assert hat_mu(_quad([1.0, 4.0]), np.array([1.0, 1.0])) == pytest.approx(3.4, rel=1e-15)


def test_hat_mu_isotropic_is_exact():
    p = _quad([2.5, 2.5, 2.5])
    assert hat_mu(p, np.array([0.3, -1.0, 2.0])) == pytest.approx(2.5, rel=1e-14)


def test_hat_mu_on_eigenvector_returns_eigenvalue():
    p = _quad([1.0, 5.0, 9.0])
    assert hat_mu(p, np.array([0.0, 2.0, 0.0])) == pytest.approx(5.0, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_hat_mu_within_spectrum_for_quadratics(seed):
    g = np.random.Generator(np.random.PCG64(seed))
    eigs = np.sort(np.exp(g.uniform(0, np.log(50.0), 6)))
    q, p = make_spectral(eigs, g.standard_normal(6), 0.0, seed=seed, basis="random")
    m = hat_mu(p, q.x_star + g.standard_normal(6))
    assert eigs[0] * (1 - 1e-10) <= m <= eigs[-1] * (1 + 1e-10)


def test_hat_mu_degenerate_gap_signals_convergence():
    p = _quad([1.0, 2.0], f_star=3.0)
    with pytest.raises(Converged):
        hat_mu(p, p.x_star)
    with pytest.raises(Converged):
        hat_mu_from(1.0, degeneracy_threshold(3.0), 3.0)
    assert degeneracy_threshold(3.0) == pytest.approx(4e-14)


def test_hat_mu_requires_f_star():
    p = CompositeProblem(Quadratic(np.ones(2), np.zeros(2)))
    with pytest.raises(ValueError):
        hat_mu(p, np.ones(2))


def test_running_minimum():
    est = MuEstimator(mu0=5.0)
    assert [est.update(r) for r in (7.0, 3.0, 4.0, 1.0)] == [5.0, 3.0, 3.0, 1.0]
    assert est.current == 1.0
    assert est.history[1] == (1, 3.0, 3.0)
    uncapped = MuEstimator()
    assert uncapped.update(7.0) == 7.0
    with pytest.raises(ValueError):
        est.update(0.0)
    with pytest.raises(ValueError):
        MuEstimator(mu0=-1.0)


def test_mu_local_hand_computed():
    # h = ||x||^2 / 2 analysed with L = 2: numerator 5/8 ||x||^2
    q = Quadratic(np.ones(3), np.zeros(3))
    q.L = 2.0
    p = CompositeProblem(q, f_star=0.0, x_star=np.zeros(3))
    assert mu_local(p, np.array([1.0, -2.0, 0.5])) == pytest.approx(1.25, rel=1e-14)


def test_mu_local_at_minimiser_is_degenerate():
    p = _quad([1.0, 3.0])
    with pytest.raises(Converged):
        mu_local(p, p.x_star)
