import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenqueue.instances import toy_network
from greenqueue.model import (Action, ActionGrid, AvailabilityViolation, ChannelModel, EnergyModel,
                              ExogenousSampler, FiniteDistribution, GlobalState, TrafficModel, battery_joules,
                              compute_rate, make_streams, sample_exogenous, split_power, step_data_queue,
                              step_energy_queue)


def two_user_channel(xi=0.5):
    direct = 10 ** -1.5
    L = np.array([[direct, 0.1 * direct], [0.1 * direct, direct]])
    return ChannelModel(2, 1e6, 1e-6, xi, L, [0.5, 1.5], [0.5, 0.5], 0.05)


# --- power split ---------------------------------------------------------------

@pytest.mark.parametrize("ac,re,tx,total", [(0, 0, 0, 0), (300, 0, 260, 300), (300, 600, 860, 900)])
def test_split_power(ac, re, tx, total):
    assert split_power(Action(ac, re), 40.0) == (tx, total)


# --- rate ----------------------------------------------------------------------

def test_rate_unit_snr_gives_bandwidth():
    ch = ChannelModel(1, 1e6, 1e-6, 1.0, np.ones((1, 1)), [1.0], [1.0], 0.05)
    assert compute_rate(0, np.zeros((1, 1), int), [ch.noise_power], ch) == pytest.approx(1e6, rel=1e-15)


def test_rate_zero_power():
    ch = two_user_channel()
    assert compute_rate(0, np.zeros((2, 2), int), [0.0, 900.0], ch) == 0.0


def test_rate_two_user_hand_value():
    # reference values from a 30-digit evaluation of the SINR formula
    ch = two_user_channel(xi=0.5)
    csi = np.array([[1, 0], [1, 1]])
    assert compute_rate(0, csi, [260.0, 860.0], ch) == pytest.approx(1853254.4277093725, rel=1e-13)
    assert compute_rate(1, csi, [260.0, 860.0], ch) == pytest.approx(3340993.8574804343, rel=1e-13)


power = st.floats(0.0, 2000.0, allow_nan=False)


@given(power, power, power, st.integers(0, 1), st.integers(0, 1))
def test_rate_monotone(p_own, p_int, extra, b_own, b_cross):
    ch = two_user_channel()
    csi = np.array([[b_own, b_cross], [b_cross, b_own]])
    r = compute_rate(0, csi, [p_own, p_int], ch)
    assert compute_rate(0, csi, [p_own + extra, p_int], ch) >= r
    assert compute_rate(0, csi, [p_own, p_int + extra], ch) <= r


# --- queues --------------------------------------------------------------------

@pytest.mark.parametrize("q,served,arr,cap,out", [(3, 0, 1, 5, 4), (5, 0, 3, 5, 5), (2, 2, 0, 5, 0), (2, 7, 0, 5, 0)])
def test_data_queue(q, served, arr, cap, out):
    assert step_data_queue(q, float(served), 1.0, arr, cap) == out


def test_service_is_floored():
    assert step_data_queue(3, 1.999, 1.0, 0, 5) == 2


@pytest.mark.parametrize("e,drain,harvest,cap,out", [(5, 2, 4, 6, 6), (5, 5, 0, 6, 0)])
def test_energy_queue(e, drain, harvest, cap, out):
    assert step_energy_queue(e, float(drain), 1.0, harvest, cap) == out


def test_energy_availability_violation():
    with pytest.raises(AvailabilityViolation):
        step_energy_queue(2, 3.0, 1.0, 0, 6)


def test_energy_draw_must_be_whole_units():
    with pytest.raises(ValueError):
        step_energy_queue(5, 1.5, 1.0, 0, 6)


@given(st.integers(0, 8), st.floats(0, 10), st.integers(0, 5), st.integers(0, 5))
def test_data_queue_monotone_and_bounded(q, rate, a1, a2):
    lo, hi = sorted((a1, a2))
    x, y = step_data_queue(q, rate, 1.0, lo, 8), step_data_queue(q, rate, 1.0, hi, 8)
    assert 0 <= x <= y <= 8


@given(st.integers(0, 8), st.integers(0, 8), st.integers(0, 5), st.integers(0, 5))
def test_energy_queue_monotone_and_bounded(e, drain, h1, h2):
    drain = min(drain, e)
    lo, hi = sorted((h1, h2))
    x, y = step_energy_queue(e, float(drain), 1.0, lo, 8), step_energy_queue(e, float(drain), 1.0, hi, 8)
    assert 0 <= x <= y <= 8


# --- distributions and model types ---------------------------------------------

def test_distribution_validation():
    with pytest.raises(ValueError):
        FiniteDistribution(np.array([0, 1]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        FiniteDistribution(np.array([1, 0]), np.array([0.5, 0.5]))


def test_fading_mean_and_coupling():
    ch = two_user_channel()
    assert ch.eta == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ChannelModel(1, 1.0, 1.0, 1.0, np.ones((1, 1)), [0.5, 2.0], [0.5, 0.5], 1.0)


def test_poisson_truncation_covers_mass():
    tr = TrafficModel.compound_poisson(1.1, 2e6, 1e4, 0.05, [1000])
    d = tr.arrivals[0]
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert d.support.min() >= 0 and d.support.max() <= 1000
    # lambda * tau * packet bits / bits per unit = 11 units, minus what overflows the buffer
    assert 10.0 < d.mean <= 11.0


def test_battery_conversion():
    assert battery_joules(1.2, 20.0) == pytest.approx(86_400.0)


def test_energy_model_units():
    en = EnergyModel.poisson(800.0, 0.05, 15.0, [86_400.0])
    assert en.capacity_units[0] == 5760
    assert en.harvests[0].support.max() <= 5760


def test_local_state_projection():
    net = toy_network(K=2)
    gs = GlobalState(np.array([[1, 0], [0, 0]]), np.array([2, 1]), np.array([0, 2]))
    ls = net.local_state(gs, 0)
    assert (ls.own_csi, ls.data_q, ls.energy_q) == (1, 2, 0)
    ls = net.local_state(gs, 1)
    assert (ls.own_csi, ls.data_q, ls.energy_q) == (0, 1, 2)


def test_grid_layout():
    g = ActionGrid([0.0, 300.0], [0.0, 300.0, 600.0])
    assert g.n_actions == 6
    assert g.action(4) == Action(300.0, 300.0, 4)
    assert g.zero_action == 0


# --- exogenous sampling ----------------------------------------------------------

def test_point_mass_csi_is_constant():
    net = toy_network(K=2, n_bins=1)
    csi, _, _ = ExogenousSampler(net, make_streams(3)).draw(1000)
    assert np.all(csi == 0)


def test_zero_arrivals():
    net = toy_network(K=1, arrival_probs=[1.0])
    _, arr, _ = ExogenousSampler(net, make_streams(0)).draw(1000)
    assert np.all(arr == 0)


def test_sampling_deterministic():
    net = toy_network(K=2)
    a = ExogenousSampler(net, make_streams(9)).draw(50)
    b = ExogenousSampler(net, make_streams(9)).draw(50)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    one = sample_exogenous(ExogenousSampler(net, make_streams(9)))
    np.testing.assert_array_equal(one[0], a[0][0])


def test_empirical_frequencies_within_three_sigma():
    n = 10**6
    net = toy_network(K=2, arrival_probs=[0.2, 0.5, 0.3], harvest_probs=[0.7, 0.3])
    csi, arr, har = ExogenousSampler(net, make_streams(1)).draw(n)
    checks = [(csi[:, 0, 1], [0.5, 0.5]), (arr[:, 1], [0.2, 0.5, 0.3]), (har[:, 0], [0.7, 0.3])]
    for x, p in checks:
        counts = np.bincount(x, minlength=len(p))
        for c, pi in zip(counts, p):
            assert abs(c / n - pi) <= 3 * math.sqrt(pi * (1 - pi) / n)
