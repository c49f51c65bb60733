import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radgpr import consensus as cons
from radgpr.consensus import ConsensusState, Signals
from radgpr.distributed_gpr import DegenerateStateError, poe_aggregate, read_global
from radgpr.netgraph import GraphSchedule


def _state(theta, xi, lam):
    z = Signals(np.zeros(1), np.zeros(1), np.zeros(1))
    return ConsensusState(np.array([theta]), np.array([xi]), np.array([lam]), z)


def test_read_prior_state():
    g = read_global(cons.init_state(2, 1.0))
    np.testing.assert_array_equal(g.mu_hat, 0)
    np.testing.assert_array_equal(g.var_hat, 1)
    np.testing.assert_array_equal(g.var_ave, 1)


def test_read_definition():
    g = read_global(_state(3.0, 2.0, 0.7))
    assert g.var_hat[0] == 0.5 and g.mu_hat[0] == 1.5 and g.var_ave[0] == 0.7


def test_degenerate_state():
    with pytest.raises(DegenerateStateError, match="degenerate"):
        read_global(_state(1.0, 0.0, 1.0))


def test_poe_hand_values():
    assert poe_aggregate([0.0, 2.0], [1.0, 1.0]) == (1.0, 1.0)
    _, v = poe_aggregate([0.0, 0.0], [1.0, 0.5])
    assert v == pytest.approx(2 / 3)
    m, v = poe_aggregate([[0.4, 0.4]] * 3, [[0.2, 0.2]] * 3)
    np.testing.assert_allclose(m, 0.4)
    np.testing.assert_allclose(v, 0.2)


def test_poe_rejects_nonpositive():
    with pytest.raises(ValueError):
        poe_aggregate([0.0, 1.0], [1.0, 0.0])


positive = st.floats(0.01, 10.0)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 8), elements=positive), st.floats(1.0, 10.0))
def test_poe_jensen_and_sandwich(var, s):
    _, agg = poe_aggregate(np.zeros_like(var), var)
    # harmonic mean never exceeds the arithmetic mean
    assert agg <= np.mean(var) * (1 + 1e-12)
    assert agg >= var.min() * (1 - 1e-12)
    assert agg <= var.max() * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=6),
    st.lists(st.floats(0.0, 3.0), min_size=6, max_size=6),
    st.floats(1.0, 5.0),
)
def test_aggregated_variance_sandwich(noise, rho, s):
    # nearest-neighbour variances s - kappa^2/(s + e) with kappa = s exp(-2 rho^2)
    n = len(noise)
    kappa = s * np.exp(-2 * np.asarray(rho[:n]) ** 2)
    var = s - kappa**2 / (s + np.asarray(noise))
    _, agg = poe_aggregate(np.zeros(n), var)
    e_min, e_max = min(noise), max(noise)
    assert agg >= s * e_min / (s + e_min) * (1 - 1e-12)
    assert agg <= (s - np.mean(kappa**2) / (s + e_max)) * (1 + 1e-12)


def test_frozen_consensus_matches_poe(rng):
    sched = GraphSchedule.ring_pairs()
    mu = rng.normal(size=(4, 7))
    var = rng.uniform(0.05, 1.0, size=(4, 7))
    sig = [cons.reference_signals(m, v) for m, v in zip(mu, var)]
    states = [cons.init_state(7, 1.0) for _ in range(4)]
    for t in range(300):
        states = cons.network_round(states, sched.at(t), sig)
    m_agg, v_agg = poe_aggregate(mu, var)
    for s in states:
        g = read_global(s)
        np.testing.assert_allclose(g.var_hat, v_agg, atol=1e-6)
        np.testing.assert_allclose(g.mu_hat, m_agg, atol=1e-6)
        np.testing.assert_allclose(g.var_ave, var.mean(axis=0), atol=1e-6)
