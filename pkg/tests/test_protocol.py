import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from oracles import random_reachable_topology
from sfsync import (AgentModel, CouplingMode, DesignFailure, InvalidInput, ProtocolParams,
                    Topology, Unsolvable, build_closed_loop, design_observer_gain,
                    design_protocol, design_rho, expanded_laplacian, laplacian, select_epsilon,
                    solve_care, verify_frequency_condition)
from sfsync.frequency import sigma_min_delayed
from sfsync.protocol import delay_free_spectrum, feedback_gain, select_theta

TRIPLE_A = np.diag([1.0, 1.0], 1)
ROUNDED_P = np.array([[0.0001, 0.0009, 0.0032],
                      [0.0009, 0.0096, 0.0432],
                      [0.0032, 0.0432, 0.2941]])
PATH3 = Topology.from_edges(3, [(0, 1), (1, 2)], [0])


def _match(a, b):
    """Largest distance after optimally pairing two eigenvalue multisets."""
    cost = np.abs(np.subtract.outer(a, b))
    r, c = linear_sum_assignment(cost)
    return cost[r, c].max()


# -- design_rho ----------------------------------------------------------------

@pytest.mark.parametrize("tau_bar", [0.0, 1.0, 4.0, 100.0])
def test_rho_hurwitz_or_origin(tau_bar):
    assert design_rho(0.0, tau_bar) == pytest.approx(1.01)


def test_rho_oscillator():
    assert design_rho(1.0, 1.5) == pytest.approx(1.01 / math.cos(1.5))
    assert design_rho(1.0, 1.5) == pytest.approx(14.279, abs=1e-3)


@pytest.mark.parametrize("tau_bar", [1.6, math.pi / 2, 3.0])
def test_rho_beyond_bound(tau_bar):
    with pytest.raises(Unsolvable, match="pi/2"):
        design_rho(1.0, tau_bar)


def test_rho_override():
    assert design_rho(0.0, 4.0, rho=1.0) == 1.0
    with pytest.raises(Unsolvable):
        design_rho(1.0, 1.0, rho=1.5)   # 1.5 cos(1) < 1
    with pytest.raises(InvalidInput):
        design_rho(0.0, 1.0, rho=-1.0)


@settings(max_examples=80, deadline=None)
@given(w=st.floats(0.0, 10.0), frac=st.floats(0.0, 0.99), margin=st.floats(1e-4, 0.5))
def test_rho_strict_bound(w, frac, margin):
    tau = frac * (math.pi / 2) / w if w > 0 else 5.0 * frac
    rho = design_rho(w, tau, margin=margin)
    assert rho * math.cos(tau * w) > 1
    assert select_theta(rho, tau, w) > 0


def test_theta_closed_form():
    rho, tau, w = 1.2, 0.8, 0.5
    theta = select_theta(rho, tau, w)
    edge = w + theta
    assert rho * math.cos(tau * (edge - 1e-9)) > 1
    assert rho * math.cos(tau * (edge + 1e-6)) < 1


# -- select_epsilon ------------------------------------------------------------

def test_epsilon_triple_integrator(triple):
    sel = select_epsilon(triple, 1.01, 4.0, 0.0)
    assert sel.epsilon_star > 0
    G = triple.B @ triple.B.T @ sel.P
    assert sel.gain_norm == pytest.approx(1.01 * np.linalg.norm(G, 2))
    if sel.certificate == "norm_bound":
        assert sel.gain_norm <= sel.mu / 2
    else:
        # band certificate: check sigma_min >= mu/2 on the band with a fresh grid
        lo = sel.theta
        hi = max(np.linalg.norm(triple.A, 2) + 1, lo)
        w = np.concatenate([np.linspace(lo, hi, 3001), -np.linspace(lo, hi, 3001)])
        s = sigma_min_delayed(triple.A, G, 1.01, w, np.linspace(0, 4.0, 81))
        assert s.min() >= sel.mu / 2
        assert sel.gain_norm <= 0.5


def test_strict_norm_rule_is_infeasible_for_triple_integrator(triple):
    with pytest.raises(DesignFailure, match="floor"):
        select_epsilon(triple, 1.01, 4.0, 0.0, rule="norm")


@pytest.mark.parametrize("rule", ["norm", "auto"])
def test_epsilon_hurwitz_model(rule):
    model = AgentModel(-np.eye(2), np.eye(2), np.eye(2))
    sel = select_epsilon(model, 1.01, 1.0, 0.0, rule=rule)
    assert sel.mu == pytest.approx(1.0)
    assert sel.epsilon_star == 1.0
    assert 1.01 * np.linalg.norm(sel.P, 2) <= 0.5


def test_epsilon_scalar_integrator():
    model = AgentModel([[0.0]], [[1.0]], [[1.0]])
    sel = select_epsilon(model, 1.01, 1.0, 0.0, rule="norm")
    bound = (sel.mu / (2 * 1.01)) ** 2
    assert sel.epsilon_star <= bound < 10 * sel.epsilon_star
    assert sel.P[0, 0] == pytest.approx(math.sqrt(sel.epsilon_star))


def test_epsilon_no_theta(triple):
    with pytest.raises(Unsolvable):
        select_epsilon(triple, 1.0, 4.0, 0.0)


def test_epsilon_decreases_with_tau_bar(triple):
    eps = [select_epsilon(triple, 1.01, tb, 0.0).epsilon_star for tb in (1.0, 3.0, 4.0)]
    assert eps[0] >= eps[1] >= eps[2]


# -- observer gain -------------------------------------------------------------

def test_observer_gain_triple_integrator(triple_partial):
    K = design_observer_gain(triple_partial, [-1, -2, -3])
    assert np.array_equal(K.ravel(), [6.0, 11.0, 6.0])
    # characteristic polynomial s^3 + 6 s^2 + 11 s + 6
    assert np.allclose(np.poly(TRIPLE_A - K @ triple_partial.C), [1, 6, 11, 6])


def test_observer_gain_default_poles(triple_partial):
    K = design_observer_gain(triple_partial)
    assert np.array_equal(K.ravel(), [6.0, 11.0, 6.0])


def test_observer_gain_scalar():
    K = design_observer_gain(AgentModel([[0.0]], [[1.0]], [[1.0]]), [-5])
    assert K[0, 0] == pytest.approx(5.0)


def test_observer_gain_multi_output():
    model = AgentModel(TRIPLE_A, [0, 0, 1], [[1, 0, 0], [0, 0, 1]])
    poles = [-1, -2 + 1j, -2 - 1j]
    K = design_observer_gain(model, poles)
    assert K.shape == (3, 2)
    assert _match(np.linalg.eigvals(TRIPLE_A - K @ model.C), np.array(poles)) < 1e-8


def test_observer_gain_errors(triple_partial):
    with pytest.raises(InvalidInput, match="left half plane"):
        design_observer_gain(triple_partial, [-1, -2, 0.5])
    with pytest.raises(InvalidInput, match="conjugation"):
        design_observer_gain(triple_partial, [-1, -2 + 1j, -3])
    undetectable = AgentModel(TRIPLE_A, [0, 0, 1], [0, 0, 1])
    with pytest.raises(InvalidInput, match="unobservable unstable"):
        design_observer_gain(undetectable)


# -- frequency certificate -----------------------------------------------------

def test_verify_rho_one_within_delay_margin(triple):
    rep = verify_frequency_condition(triple, ROUNDED_P, 1.0, 3.0)
    assert rep.passed and rep.min_sigma > 0
    assert rep.omega_bar == pytest.approx(2.0)


def test_verify_rho_one_beyond_delay_margin(triple):
    # the coarse grid stays positive, the refined search finds a true zero
    rep = verify_frequency_condition(triple, ROUNDED_P, 1.0, 4.0)
    assert rep.grid_min > 1e-5
    assert rep.min_sigma < 1e-10 and not rep.passed
    assert 3.5 < rep.argmin[1] < 3.6


def test_verify_detects_oscillator_violation(oscillator):
    P = solve_care(oscillator, 1e-3).P
    rep = verify_frequency_condition(oscillator, P, 1.0, 1.6)
    assert rep.min_sigma < 1e-6 and not rep.passed
    assert abs(abs(rep.argmin[0]) - 1.0) < 0.1


def test_verify_delay_free_positive(triple):
    P = solve_care(triple, 1e-2).P
    rep = verify_frequency_condition(triple, P, 1.01, 0.0)
    w = np.linspace(-rep.omega_bar, rep.omega_bar, 2001)
    Acl = TRIPLE_A - 1.01 * triple.B @ triple.B.T @ P
    assert np.linalg.eigvals(Acl).real.max() < 0
    direct = min(np.linalg.svd(1j * x * np.eye(3) - Acl, compute_uv=False)[-1] for x in w)
    assert rep.grid_min == pytest.approx(direct, rel=1e-10)
    assert rep.min_sigma > 0


def test_verify_default_grid_sizes(triple):
    P = solve_care(triple, 1e-3).P
    rep = verify_frequency_condition(triple, P, 1.01, 2.0, polish=False)
    assert rep.min_sigma == rep.grid_min
    with pytest.raises(InvalidInput):
        verify_frequency_condition(triple, P, 1.01, 2.0, tau_grid_count=1)


# -- full design ---------------------------------------------------------------

def test_design_full_state(triple):
    rep = design_protocol(triple, 4.0)
    p = rep.params
    assert p.coupling_mode is CouplingMode.FULL and p.K is None
    assert p.rho == pytest.approx(1.01) and p.tau_bar == 4.0
    assert rep.frequency.passed
    assert p.rho * math.cos(p.tau_bar * rep.omega_max) > 1


def test_design_partial_state(triple_partial):
    p = design_protocol(triple_partial, 4.0).params
    assert p.coupling_mode is CouplingMode.PARTIAL
    assert np.linalg.eigvals(TRIPLE_A - p.K @ triple_partial.C).real.max() < 0


def test_design_overrides(triple_partial):
    rep = design_protocol(triple_partial, 3.0, rho=1.0, epsilon=1e-5, K=[6, 11, 6])
    assert rep.certificate == "override"
    assert rep.params.rho == 1.0 and rep.params.epsilon_star == 1e-5
    with pytest.raises(InvalidInput, match="Hurwitz"):
        design_protocol(triple_partial, 3.0, K=[0, 0, 0])


def test_design_rejects_bad_model():
    with pytest.raises(InvalidInput, match="stabilizable"):
        design_protocol(AgentModel([[0.0]], [[0.0]], [[1.0]]), 1.0)


def test_params_serialization(triple):
    p = design_protocol(triple, 4.0, verify=False).params
    again = design_protocol(triple, 4.0, verify=False).params
    assert p.to_json() == again.to_json()
    assert '"coupling_mode":"full"' in p.to_json()
    d = p.to_dict()
    assert d["rho"] == p.rho and np.allclose(d["P"], p.P)
    assert np.allclose(feedback_gain(triple, p), p.rho * triple.B.T @ p.P)


# -- closed loop ---------------------------------------------------------------

def test_single_agent_layout(triple):
    p = design_protocol(triple, 1.0, verify=False).params
    sysm = build_closed_loop(triple, Topology(np.zeros((1, 1)), [0]), p, [0.5])
    assert sysm.state_dim == 9 and sysm.delays == (0.5,)
    G = p.rho * triple.B @ triple.B.T @ p.P
    Ad = sysm.delay_terms[0][1]
    assert np.allclose(Ad[0:3, 3:6], -G) and np.allclose(Ad[3:6, 3:6], -G)
    assert np.count_nonzero(Ad) == 2 * np.count_nonzero(G)
    A0 = sysm.A0
    assert np.array_equal(A0[0:3, 0:3], TRIPLE_A)
    assert np.array_equal(A0[3:6, 3:6], TRIPLE_A - np.eye(3))
    assert np.array_equal(A0[3:6, 0:3], np.eye(3))       # zeta_bar: + iota x
    assert np.array_equal(A0[3:6, 6:9], -np.eye(3))      # zeta_bar: - iota x_r
    assert np.array_equal(A0[6:9, 6:9], TRIPLE_A)


def test_path_graph_delay_terms(triple):
    p = design_protocol(triple, 4.0, verify=False).params
    sysm = build_closed_loop(triple, PATH3, p, [1, 2, 3])
    assert sysm.delays == (1.0, 2.0, 3.0)
    shared = build_closed_loop(triple, PATH3, p, [2, 2, 3])
    assert shared.delays == (2.0, 3.0)


def test_build_rejects(triple):
    p = design_protocol(triple, 2.0, verify=False).params
    with pytest.raises(InvalidInput, match="tau_bar"):
        build_closed_loop(triple, PATH3, p, [1, 2, 3])
    with pytest.raises(InvalidInput):
        build_closed_loop(triple, PATH3, p, [1, 2])
    with pytest.raises(InvalidInput, match="unreachable"):
        build_closed_loop(triple, Topology(np.zeros((2, 2)), [0]), p, [1, 1])


def test_dimension_guard(triple, monkeypatch):
    import sfsync.protocol as proto
    monkeypatch.setattr(proto, "MAX_STATE_DIM", 10)
    p = design_protocol(triple, 2.0, verify=False).params
    with pytest.raises(InvalidInput, match="exceeds"):
        build_closed_loop(triple, PATH3, p, [1, 1, 1])


@pytest.mark.parametrize("partial", [False, True])
def test_delay_free_eigen_oracle(oscillator, partial):
    model = AgentModel(oscillator.A, oscillator.B, [[1, 0]]) if partial else oscillator
    top = Topology.from_edges(3, [(0, 1), (1, 2), (2, 0)], [0])
    p = design_protocol(model, 1.0, verify=False).params
    sysm = build_closed_loop(model, top, p, [0, 0, 0])
    lam = np.linalg.eigvals(sysm.delay_free_matrix())
    Lbar = expanded_laplacian(laplacian(top), top.root_set).Lbar
    G = p.rho * model.B @ model.B.T @ p.P
    ref = [np.tile(np.linalg.eigvals(model.A - G), 3),
           np.linalg.eigvals(np.kron(np.eye(3), model.A) - np.kron(Lbar, np.eye(2))),
           np.linalg.eigvals(model.A)]
    if partial:
        ref.append(np.tile(np.linalg.eigvals(model.A - p.K @ model.C), 3))
    assert _match(lam, np.concatenate(ref)) < 1e-7


_MODELS = {
    False: AgentModel(TRIPLE_A, [0, 0, 1], np.eye(3)),
    True: AgentModel(TRIPLE_A, [0, 0, 1], [1, 0, 0]),
}
_DESIGNS = {k: design_protocol(m, 4.0, verify=False).params for k, m in _MODELS.items()}


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 6), seed=st.integers(0, 2**32 - 1), partial=st.booleans())
def test_tracking_subsystem_hurwitz(N, seed, partial):
    model, p = _MODELS[partial], _DESIGNS[partial]
    top = random_reachable_topology(np.random.default_rng(seed), N)
    sysm = build_closed_loop(model, top, p, np.zeros(N))
    lam = np.linalg.eigvals(sysm.delay_free_matrix())
    # drop the exosystem's n eigenvalues at the origin, the rest must be stable
    rest = lam[np.argsort(np.abs(lam))][model.n:]
    assert rest.real.max() < -1e-3
    assert _match(rest, delay_free_spectrum(model, top, p)) < 1e-3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 6))
def test_kron_spectrum_is_pairwise_difference(seed, N):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    A = rng.standard_normal((n, n))
    top = random_reachable_topology(rng, N)
    Lbar = expanded_laplacian(laplacian(top), top.root_set).Lbar
    lam = np.linalg.eigvals(np.kron(np.eye(N), A) - np.kron(Lbar, np.eye(n)))
    ref = np.subtract.outer(np.linalg.eigvals(A), np.linalg.eigvals(Lbar)).ravel()
    assert _match(lam, ref) < 1e-6


def test_params_independent_of_graph(triple):
    """Design takes no graph argument, so building many networks leaves it untouched."""
    p = design_protocol(triple, 4.0, verify=False).params
    before = p.to_json()
    for N in (1, 3, 5, 10):
        from sfsync import representative_graph
        build_closed_loop(triple, representative_graph(N), p, np.full(N, 4.0))
    assert p.to_json() == before
    assert isinstance(p, ProtocolParams)
