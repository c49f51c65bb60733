import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radgpr import consensus as cons
from radgpr.distributed_gpr import GlobalPrediction, read_global
from radgpr.fused_gpr import FusionError, fuse, fuse_point, g_factor, select_active
from radgpr.kernel import Kernel, NoiseProfile, compute_fusion_constants, select_sigma_f
from radgpr.local_gpr import AgentDataset, predict_many
from radgpr.netgraph import GraphSchedule

from oracles import fused_by_hand


def _glob(mu, var, ave=None):
    mu, var = np.asarray(mu, float), np.asarray(var, float)
    return GlobalPrediction(mu, var, var.copy() if ave is None else np.asarray(ave, float))


def test_active_set_strict():
    g = _glob([0, 0, 0], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0])
    np.testing.assert_array_equal(select_active([1.0, 1.0, 1.0], g), [0])


def test_active_set_misaligned():
    with pytest.raises(FusionError):
        select_active([1.0, 1.0], _glob([0], [1]))


def test_g_hand_value():
    fc = compute_fusion_constants(1.0, NoiseProfile((0.5, 2.0)), strict=False)
    # agent 1: c - psi = 5/9 - 1/3 = 2/9
    assert g_factor(Kernel(1.0), fc, 1, 0.5, 0.9) == pytest.approx(0.5 * 2 / 9)
    # agent 0: c - psi < 0 is clamped
    assert g_factor(Kernel(1.0), fc, 0, 0.5, 0.9) == 0.0


def test_g_substitution_example():
    class Gate:
        def gate(self, i):
            return 0.1

    assert g_factor(Kernel(1.0), Gate(), 0, 0.5, 0.9) == pytest.approx(0.05)


def test_empty_active_returns_local():
    z = np.array([[0.0, 0.0], [1.0, 0.0]])
    fc = compute_fusion_constants(2.0, NoiseProfile((0.5, 0.01)))
    f = fuse(z, z[:1], np.array([0]), [1.0, 2.0], [0.3, 0.4], _glob([5.0], [0.9]), Kernel(2.0), fc, 0)
    assert f.active_set.size == 0
    np.testing.assert_array_equal(f.mu_tilde, [1.0, 2.0])
    np.testing.assert_array_equal(f.var_tilde, [0.3, 0.4])
    with pytest.raises(FusionError):
        fuse_point(z[0], z[:1], np.array([], int), (1.0, 0.3), ([1.0], [0.3]), _glob([5.0], [0.9]),
                   Kernel(2.0), fc, 0)


def test_homogeneous_is_noop(rng):
    z = rng.uniform(0, 3, size=(12, 2))
    agg = np.arange(0, 12, 3)
    fc = compute_fusion_constants(4.0, NoiseProfile((0.01,) * 3))
    mu, var = rng.normal(size=12), rng.uniform(0.2, 1.0, 12)
    f = fuse(z, z[agg], agg, mu, var, _glob(rng.normal(size=4), var[agg] / 2), Kernel(4.0), fc, 1)
    assert f.active_set.size == 4
    np.testing.assert_array_equal(f.mu_tilde, mu)
    np.testing.assert_array_equal(f.var_tilde, var)
    assert np.all(f.trace.v == 0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 50.0))
def test_vectorised_matches_hand_oracle(seed, s):
    rng = np.random.default_rng(seed)
    noise = NoiseProfile(tuple(rng.uniform(0.01, 1.0, 3)))
    fc = compute_fusion_constants(s, noise, strict=False)
    k = Kernel(s, 0.5)
    z = rng.uniform(0, 3, size=(20, 2))
    agg = np.sort(rng.choice(20, 6, replace=False))
    mu, var = rng.normal(size=20), rng.uniform(0.1, s, 20)
    glob = _glob(rng.normal(size=6), var[agg] * rng.uniform(0.3, 1.3, 6), var[agg] * rng.uniform(0.3, 1.3, 6))
    i = int(np.argmin(noise.variances))
    i = int(np.argmax(noise.variances)) if fc.gate(i) == 0 else i
    f = fuse(z, z[agg], agg, mu, var, glob, k, fc, i)
    active = list(f.active_set)
    if not active:
        return
    for p in range(20):
        m, v, j, g, vv = fused_by_hand(z[p], z[agg], active, mu[p], var[p], mu[agg], var[agg],
                                       glob.mu_hat, glob.var_hat, s, 0.5, fc.c, fc.psi[i])
        assert f.trace.agg_index[p] == j
        assert f.mu_tilde[p] == pytest.approx(m, rel=1e-12, abs=1e-14)
        assert f.var_tilde[p] == pytest.approx(v, rel=1e-12)
        pm, pv, tr = fuse_point(z[p], z[agg], f.active_set, (mu[p], var[p]), (mu[agg], var[agg]), glob, k, fc, i)
        assert (pm, pv) == pytest.approx((m, v), rel=1e-12, abs=1e-14)
        assert tr["agg_index"] == j
        # positivity and no increase, guaranteed by active-set membership
        assert 0 < f.var_tilde[p] <= var[p]
        drop = vv * vv * (var[agg][j] - glob.var_hat[j])
        if drop > 4 * np.finfo(float).eps * var[p]:  # strict once the correction survives rounding
            assert f.var_tilde[p] < var[p]


def test_two_agent_worked_instance():
    noise = NoiseProfile((0.5, 0.01))
    s = select_sigma_f(noise)
    k = Kernel(s)
    fc = compute_fusion_constants(s, noise)
    assert fc.gate(0) > 0 and fc.gate(1) == 0
    z_star = np.array([[0.0, 0.0], [0.3, 0.1], [0.6, 0.0]])
    agg = np.array([1])
    sets = [AgentDataset(0, 0.5).append((0.0, 0.5), 1.0), AgentDataset(1, 0.01).append((0.3, 0.1), 0.8)]
    local = [predict_many(d, k, z_star) for d in sets]
    states = [cons.init_state(1, s, (m[agg], v[agg])) for m, v in local]
    sig = [cons.reference_signals(m[agg], v[agg]) for m, v in local]
    for t in range(200):
        states = cons.network_round(states, GraphSchedule.complete(2).at(t), sig)
    glob = read_global(states[0])
    mu0, var0 = local[0]
    f = fuse(z_star, z_star[agg], agg, mu0, var0, glob, k, fc, 0)
    assert list(f.active_set) == [0]
    for p in range(3):
        m, v, *_ = fused_by_hand(z_star[p], z_star[agg], [0], mu0[p], var0[p], mu0[agg], var0[agg],
                                 glob.mu_hat, glob.var_hat, s, 0.5, fc.c, fc.psi[0])
        assert f.mu_tilde[p] == pytest.approx(m, rel=1e-12)
        assert f.var_tilde[p] == pytest.approx(v, rel=1e-12)
        assert 0 < f.var_tilde[p] < var0[p]
