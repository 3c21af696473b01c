import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenqueue.engine import Controller, LearnerSettings, Simulation
from greenqueue.instances import random_instance, random_tabular_params, toy_network
from greenqueue.oracle import (NotUnichain, StateSpaceTooLarge, average_cost, build_model, build_skeleton,
                               exact_gradient_pomdp, exact_gradient_posg, finite_diff_gradient, oracle_report,
                               relative_error, solve_poisson, state_count, stationarity_residual,
                               stationary_distribution)
from greenqueue.policy import LocalStateIndexer, TabularPolicyParams


def tab_params(net, logits=None, scale=0.0, seed=0):
    idx = LocalStateIndexer.identity(net.channel.n_bins, int(net.queue_cap.max()), int(net.energy.capacity_units.max()))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(net.K):
        z = rng.normal(0, scale, (idx.n_rows, net.grid.n_actions)) if logits is None else np.broadcast_to(
            np.asarray(logits, float), (idx.n_rows, net.grid.n_actions)).copy()
        out.append(TabularPolicyParams(z, idx))
    return out


def four_state():
    """One user, queue and battery of one unit, one fading bin, actions idle / 1 W AC (serves one unit)."""
    return toy_network(K=1, q_cap=1, e_cap=1, n_bins=1, n_ac=2, n_renew=1, p_cct=0.0)


# --- transition structure -------------------------------------------------------------

def test_four_state_kernel_by_hand():
    net = four_state()
    m = build_model(net, tab_params(net))
    # lattice order (q, e) = (0,0), (0,1), (1,0), (1,1); uniform over idle / transmit
    expect = np.array([[0.25, 0.25, 0.25, 0.25],
                       [0.0, 0.5, 0.0, 0.5],
                       [0.125, 0.125, 0.375, 0.375],
                       [0.0, 0.25, 0.0, 0.75]])
    np.testing.assert_allclose(m.trans, expect, atol=1e-15)
    assert state_count(net) == 4 and m.n_states == 4


def test_four_state_stationary_law_with_transient_states():
    net = four_state()
    m = build_model(net, tab_params(net))
    pi = stationary_distribution(m)
    np.testing.assert_allclose(pi, [0.0, 1 / 3, 0.0, 2 / 3], atol=1e-14)


def test_uniform_kernel_is_average_of_action_kernels():
    net = four_state()
    uni = build_model(net, tab_params(net)).trans
    idle = build_model(net, tab_params(net, [60.0, -60.0])).trans
    send = build_model(net, tab_params(net, [-60.0, 60.0])).trans
    np.testing.assert_allclose(uni, 0.5 * (idle + send), atol=1e-15)


@given(st.integers(0, 10**6))
def test_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    net = random_instance(rng)
    m = build_model(net, random_tabular_params(rng, net, scale=2.0), rng.uniform(0, 1, net.K))
    P = m.trans if isinstance(m.trans, np.ndarray) else m.trans.toarray()
    assert np.all(P >= 0)
    assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-10
    full = m.full_transition_matrix()
    full = full if isinstance(full, np.ndarray) else full.toarray()
    assert full.shape[0] == m.n_states == state_count(net)
    assert np.max(np.abs(full.sum(axis=1) - 1.0)) <= 1e-10


def test_state_cap():
    net = toy_network(K=2, q_cap=6, e_cap=6)
    with pytest.raises(StateSpaceTooLarge):
        build_skeleton(net, max_states=1000)


# --- stationary distribution ----------------------------------------------------------

def test_symmetric_two_state_chain():
    # one bin, no energy use, queue of one unit that fills and empties with probability 1/2 each frame
    net = toy_network(K=1, q_cap=1, e_cap=1, n_bins=1, n_ac=2, n_renew=1, p_cct=0.0,
                      arrival_probs=[0.5, 0.5], harvest_probs=[0.0, 1.0])
    m = build_model(net, tab_params(net, [-60.0, 60.0]))
    pi = stationary_distribution(m)
    np.testing.assert_allclose(pi.reshape(2, 2)[:, 1], [0.5, 0.5], atol=1e-12)


def test_deterministic_dynamics_concentrate():
    # only idling is possible; one unit arrives and one harvested every frame
    net = toy_network(K=1, q_cap=3, e_cap=2, n_bins=1, n_ac=1, n_renew=1, arrival_probs=[0.0, 1.0],
                      harvest_probs=[0.0, 1.0])
    m = build_model(net, tab_params(net))
    pi = stationary_distribution(m)
    expect = np.zeros(m.skeleton.n_lattice)
    expect[-1] = 1.0
    np.testing.assert_allclose(pi, expect, atol=1e-14)


def test_multiple_recurrent_classes_detected():
    # nothing is harvested and nothing drains: every battery level is its own class
    net = toy_network(K=1, q_cap=1, e_cap=2, n_bins=1, n_ac=2, n_renew=1, p_cct=0.0, harvest_probs=[1.0])
    with pytest.raises(NotUnichain) as info:
        stationary_distribution(build_model(net, tab_params(net)))
    assert len(info.value.classes) == 3


def test_fifty_state_residual():
    net = toy_network(K=1, q_cap=4, e_cap=4, n_bins=2, n_ac=3, n_renew=3, arrival_probs=[0.3, 0.4, 0.3],
                      harvest_probs=[0.2, 0.5, 0.3])
    m = build_model(net, tab_params(net, scale=1.5, seed=4), 0.3)
    assert m.n_states == 50
    pi = stationary_distribution(m)
    assert stationarity_residual(m, pi) <= 1e-12
    assert pi.sum() == pytest.approx(1.0, abs=1e-14)


# --- average cost and Poisson equation ------------------------------------------------

def test_zero_arrivals_zero_delay():
    net = toy_network(K=2, arrival_probs=[1.0])
    m = build_model(net, tab_params(net, scale=1.0))
    s = average_cost(m, stationary_distribution(m))
    np.testing.assert_allclose(s.delay, 0.0, atol=1e-14)


def test_objective_decomposes_by_user(rng):
    net = random_instance(rng, max_k=2)
    gamma = rng.uniform(0.1, 1.0, net.K)
    st_ = LearnerSettings(kind="pomdp", p0=0.7)
    m = build_model(net, random_tabular_params(rng, net), gamma, settings=st_)
    pi = stationary_distribution(m)
    s = average_cost(m, pi)
    beta = 1.0 / net.K
    # independent recomputation from the lattice and the action marginals
    mean_q = pi @ m.skeleton.q
    expect = sum(beta * mean_q[k] + gamma[k] * (s.ac_power[k] - 0.7) for k in range(net.K))
    assert s.psi == pytest.approx(expect, rel=1e-12, abs=1e-14)
    assert s.psi == pytest.approx(float(s.per_user.sum()), rel=1e-14)


def test_constant_cost_gives_flat_potential():
    # no queue term and a single AC level: the stage cost is gamma * (0 - p0) everywhere
    net = toy_network(K=1, q_cap=2, e_cap=2, n_ac=1, n_renew=2)
    settings = LearnerSettings(kind="pomdp", beta=0.0, p0=2.0)
    m = build_model(net, tab_params(net, scale=1.0), 0.5, settings=settings)
    sol = solve_poisson(m)
    assert sol.avg_cost == pytest.approx(-1.0, abs=1e-14)
    np.testing.assert_allclose(sol.reduced, 0.0, atol=1e-13)
    np.testing.assert_allclose(sol.potential, 0.0, atol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_poisson_residual_random(seed):
    rng = np.random.default_rng(100 + seed)
    net = random_instance(rng)
    m = build_model(net, random_tabular_params(rng, net), rng.uniform(0, 1, net.K))
    sol = solve_poisson(m)
    assert sol.residual <= 1e-9
    assert sol.reduced[m.skeleton.ref] == 0.0
    pi = stationary_distribution(m)
    assert sol.avg_cost == pytest.approx(average_cost(m, pi).psi, rel=1e-10, abs=1e-12)


def test_regenerative_identity_monte_carlo():
    """V(s) = E_s[sum of (g - psi) until the reference is next hit], from every start state."""
    net = toy_network(K=1, q_cap=1, e_cap=1, n_bins=1, n_ac=1, n_renew=2, p_cct=0.0,
                      arrival_probs=[0.4, 0.6], harvest_probs=[0.5, 0.5])
    settings = LearnerSettings(kind="none", beta=1.0, p0=0.0)
    params = tab_params(net, scale=1.0, seed=3)
    m = build_model(net, params, 0.0, settings=LearnerSettings(kind="pomdp", beta=1.0, p0=0.0))
    sol = solve_poisson(m)
    assert m.n_states == 4
    sim = Simulation(net, Controller.from_params(params), settings, seed=11)
    n = 400_000
    b = sim.advance(n)
    g = b.g[:, 0] - sol.avg_cost
    zeta = b.zeta.astype(bool)
    # backward pass: S_t = g_t + S_{t+1}, cut where the next frame starts at the reference
    S = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        if t + 1 < n and zeta[t + 1]:
            acc = 0.0
        acc = g[t] + acc
        S[t] = acc
    last_hit = np.flatnonzero(zeta)[-1]
    code = b.q[:, 0] * 2 + b.e[:, 0]
    for s in range(4):
        idx = np.flatnonzero((code == s) & (np.arange(n) < last_hit))
        batches = np.array_split(S[idx], 40)
        means = np.array([x.mean() for x in batches])
        se = means.std(ddof=1) / np.sqrt(means.size)
        assert abs(means.mean() - sol.reduced[s]) <= 3 * se + 1e-9, (s, means.mean(), sol.reduced[s], se)


# --- gradients -------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(700 + seed)
    net = random_instance(rng)
    params = random_tabular_params(rng, net)
    gamma = rng.uniform(0, 1, net.K)
    m = build_model(net, params, gamma)
    exact = exact_gradient_pomdp(m)
    fd = finite_diff_gradient(net, params, gamma, h=1e-5, skeleton=m.skeleton)
    for e, f in zip(exact, fd):
        assert relative_error(e, f).max() <= 1e-5


def test_flat_objective_has_zero_gradient(rng):
    net = random_instance(rng)
    settings = LearnerSettings(kind="pomdp", beta=0.0)
    m = build_model(net, random_tabular_params(rng, net), 0.0, settings=settings)
    for g in exact_gradient_pomdp(m):
        assert np.max(np.abs(g)) <= 1e-14


def test_tabular_gradient_sums_to_zero_per_state(rng):
    net = random_instance(rng)
    m = build_model(net, random_tabular_params(rng, net), rng.uniform(0, 1, net.K))
    for g in exact_gradient_pomdp(m):
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)


def test_posg_gradient_single_user_equals_pomdp(rng):
    net = toy_network(K=1, q_cap=2, e_cap=2, n_ac=3, n_renew=2)
    params = tab_params(net, scale=1.0, seed=8)
    m = build_model(net, params, 0.4, settings=LearnerSettings(kind="pomdp", p0=1.0))
    np.testing.assert_array_equal(exact_gradient_posg(m, 0), exact_gradient_pomdp(m)[0])


def test_posg_gradient_matches_finite_differences(rng):
    net = random_instance(rng, max_k=2)
    while net.K != 2:
        net = random_instance(rng, max_k=2)
    params = random_tabular_params(rng, net)
    gamma = rng.uniform(0, 1, 2)
    settings = LearnerSettings(kind="posg")
    m = build_model(net, params, gamma, settings=settings)
    for k in range(2):
        exact = exact_gradient_posg(m, k)
        fd = finite_diff_gradient(net, params, gamma, h=1e-5, users=[k], objective_user=k, skeleton=m.skeleton)[0]
        assert relative_error(exact, fd).max() <= 1e-5


def test_posg_decoupled_without_cross_gain(rng):
    net = toy_network(K=2, q_cap=2, e_cap=1, n_ac=2, n_renew=2, cross=0.0)
    assert net.channel.eta == 0.0
    settings = LearnerSettings(kind="posg", p0=0.5)
    params = tab_params(net, scale=1.0, seed=1)
    other = tab_params(net, scale=3.0, seed=2)
    base = build_model(net, params, [0.3, 0.6], settings=settings)
    moved = build_model(net, [params[0], other[1]], [0.3, 0.6], settings=settings)
    g0, g1 = exact_gradient_posg(base, 0), exact_gradient_posg(moved, 0)
    assert np.max(np.abs(g0 - g1)) <= 1e-10
    pi0, pi1 = stationary_distribution(base), stationary_distribution(moved)
    assert abs(average_cost(base, pi0, user=0).psi - average_cost(moved, pi1, user=0).psi) <= 1e-10


def test_finite_differences_exact_on_quadratic():
    net = four_state()
    params = tab_params(net, scale=1.0, seed=5)
    c = 0.3

    def quad(model):
        return float(np.sum((model.params[0].values - c) ** 2))

    fd = finite_diff_gradient(net, params, objective=quad, h=1e-3)[0]
    np.testing.assert_allclose(fd, 2 * (params[0].values - c), atol=1e-9)


def test_finite_difference_order_of_accuracy():
    rng = np.random.default_rng(31)
    net = toy_network(K=1, q_cap=2, e_cap=2, n_ac=3, n_renew=2)
    params = random_tabular_params(rng, net, scale=1.0)
    m = build_model(net, params, 0.5)
    exact = exact_gradient_pomdp(m)[0]
    errs = []
    for h in (0.2, 0.1):
        fd = finite_diff_gradient(net, params, 0.5, h=h, skeleton=m.skeleton)[0]
        errs.append(np.max(np.abs(fd - exact)))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_oracle_report(tmp_path):
    net = four_state()
    m = build_model(net, tab_params(net, scale=1.0), 0.2)
    path = tmp_path / "report.json"
    rep = oracle_report(m, path, fd_check=True)
    on_disk = json.loads(path.read_text())
    assert on_disk["n_states"] == 4 and rep["poisson_residual"] <= 1e-9
    assert rep["fd_max_relative_error"] <= 1e-5
