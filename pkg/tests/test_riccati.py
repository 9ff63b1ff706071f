import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_stabilizable
from sfsync import AgentModel, InvalidInput, residual, solve_care, validate
from sfsync.riccati import EPS_FLOOR

TRIPLE = AgentModel(np.diag([1.0, 1.0], 1), [0, 0, 1], np.eye(3))
ROUNDED_P = np.array([[0.0001, 0.0009, 0.0032],
                      [0.0009, 0.0096, 0.0432],
                      [0.0032, 0.0432, 0.2941]])


def test_triple_integrator_matches_rounded_reference():
    sol = solve_care(TRIPLE, 1e-5)
    assert np.max(np.abs(sol.P - ROUNDED_P)) <= 5e-4
    assert sol.residual_norm <= 1e-8
    assert sol.epsilon == 1e-5


def test_scalar_integrator():
    sol = solve_care(AgentModel([[0.0]], [[1.0]], [[1.0]]), 0.04)
    assert sol.P[0, 0] == pytest.approx(0.2, abs=1e-14)


def test_scalar_stable():
    sol = solve_care(AgentModel([[-1.0]], [[1.0]], [[1.0]]), 3.0)
    assert sol.P[0, 0] == pytest.approx(1.0, abs=1e-13)


def test_residual_examples():
    scalar = AgentModel([[0.0]], [[1.0]], [[1.0]])
    assert residual(scalar, 0.04, np.array([[0.2]])) <= 1e-14
    two = AgentModel(np.zeros((2, 2)), np.eye(2), np.eye(2))
    assert residual(two, 1.0, np.zeros((2, 2))) == pytest.approx(np.sqrt(2))
    assert residual(TRIPLE, 1e-5, ROUNDED_P) <= 1e-3


@pytest.mark.parametrize("eps", [0.0, -1e-3])
def test_nonpositive_epsilon_rejected(eps):
    with pytest.raises(InvalidInput):
        solve_care(TRIPLE, eps)


def test_epsilon_clamped_to_floor():
    sol = solve_care(AgentModel([[0.0]], [[1.0]], [[1.0]]), 1e-20)
    assert sol.epsilon == EPS_FLOOR
    assert sol.P[0, 0] == pytest.approx(np.sqrt(EPS_FLOOR), rel=1e-10)


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-4, 1e-6, 1e-8])
def test_agrees_with_scipy(eps):
    ref = la.solve_continuous_are(TRIPLE.A, TRIPLE.B, eps * np.eye(3), np.eye(1))
    P = solve_care(TRIPLE, eps).P
    assert np.allclose(P, ref, rtol=1e-7, atol=1e-14 * np.abs(ref).max())


def _stabilizable(seed, n):
    rng = np.random.default_rng(seed)
    while True:
        A, B = random_stabilizable(rng, n)
        model = AgentModel(A, B, np.eye(n))
        if validate(model).stabilizable:
            return model


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), log_eps=st.floats(-6, 0))
def test_random_solution_properties(seed, n, log_eps):
    model = _stabilizable(seed, n)
    sol = solve_care(model, 10.0 ** log_eps)
    P = sol.P
    assert np.array_equal(P, P.T)
    assert np.linalg.eigvalsh(P).min() > 0
    assert sol.residual_norm <= 1e-8 * (1 + np.linalg.norm(P) ** 2)
    assert np.linalg.eigvals(model.A - model.B @ model.B.T @ P).real.max() < 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), log_eps=st.floats(-5, -1))
def test_monotone_in_epsilon(seed, n, log_eps):
    model = _stabilizable(seed, n)
    e1, e2 = 10.0 ** log_eps, 10.0 ** (log_eps + 0.7)
    P1, P2 = solve_care(model, e1).P, solve_care(model, e2).P
    assert np.linalg.eigvalsh(P2 - P1).min() >= -1e-10 * np.linalg.norm(P2, 2)


def test_low_gain_decade_shrink():
    norms = [np.linalg.norm(solve_care(TRIPLE, 10.0 ** -k).P, 2) for k in range(0, 11)]
    assert all(b < a for a, b in zip(norms, norms[1:]))
