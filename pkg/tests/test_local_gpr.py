import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radgpr.kernel import Kernel
from radgpr.local_gpr import (
    AgentDataset,
    DatasetError,
    NearestTracker,
    RepetitiveSampleError,
    dispersion,
    nearest,
    nearest_index,
    predict,
    predict_many,
    variance_bounds,
)

from oracles import full_gpr, nearest_by_scan

coords = st.floats(min_value=-10, max_value=10, allow_nan=False)
points = st.tuples(coords, coords)


def test_append_grows_and_preserves_order():
    ds = AgentDataset(noise_var=0.1)
    ds.append((0, 0), 1.0)
    assert len(ds) == 1
    for k in range(1, 5):
        ds.append((k, 0), float(k))
    ds.append((9, 9), 9.0)
    assert len(ds) == 6
    np.testing.assert_array_equal(ds.outputs, [0 + 1.0, 1, 2, 3, 4, 9])
    assert (9.0, 9.0) in ds


def test_growth_beyond_initial_buffer():
    ds = AgentDataset()
    for k in range(100):
        ds.append((k, -k), k)
    assert len(ds) == 100
    np.testing.assert_array_equal(ds.inputs[:, 0], np.arange(100))


def test_duplicate_rejected():
    ds = AgentDataset()
    for k in range(5):
        ds.append((k, k), 0.0)
    with pytest.raises(RepetitiveSampleError, match="repetitive sample"):
        ds.append((2, 2), 1.0)
    assert len(ds) == 5


def test_wrong_dimension_rejected():
    with pytest.raises(DatasetError):
        AgentDataset(dim=2).append((1, 2, 3), 0.0)


def test_nearest_basic_and_tie_break():
    ds = AgentDataset().append((0, 0), 5.0)
    idx, d2 = nearest_index(ds, (3, 4))
    assert idx == 0 and math.sqrt(d2) == 5.0
    ds.append((2, 0), 7.0)
    z, y = nearest(ds, (1, 0))
    np.testing.assert_array_equal(z, [0, 0])
    assert y == 5.0
    idx, d2 = nearest_index(ds, (2, 0))
    assert idx == 1 and d2 == 0.0


def test_nearest_empty():
    with pytest.raises(DatasetError):
        nearest_index(AgentDataset(), (0, 0))


@settings(max_examples=100, deadline=None)
@given(st.lists(points, min_size=1, max_size=30, unique=True), points)
def test_nearest_matches_scan(pts, z):
    ds = AgentDataset()
    for p in pts:
        ds.append(p, 0.0)
    idx, d2 = nearest_index(ds, z)
    ref, ref_d = nearest_by_scan(pts, z)
    assert d2 == pytest.approx(ref_d, rel=1e-12, abs=1e-300)
    assert ref_d == pytest.approx(float(((np.asarray(pts[idx]) - z) ** 2).sum()), rel=1e-12, abs=1e-300)


def test_predict_hand_values():
    ds = AgentDataset(noise_var=1.0).append((0.5, 0.5), 2.0)
    p = predict(ds, Kernel(1.0), (0.5, 0.5))
    assert p.mean == 1.0 and p.variance == 0.5
    mean, var = full_gpr(1.0, 0.5, [[0.5, 0.5]], [2.0], 1.0, [[0.5, 0.5]])
    assert p.mean == pytest.approx(mean[0], rel=1e-14) and p.variance == pytest.approx(var[0], rel=1e-14)


def test_predict_noiseless_interpolates():
    ds = AgentDataset(noise_var=1e-14).append((1, 1), 3.0)
    p = predict(ds, Kernel(1.0), (1, 1))
    assert p.mean == pytest.approx(3.0, rel=1e-12)
    assert p.variance == pytest.approx(0.0, abs=1e-12)


def test_predict_far_recovers_prior():
    ds = AgentDataset(noise_var=0.01).append((0, 0), 3.0)
    p = predict(ds, Kernel(2.0), (100, 100), prior_mean=lambda z: np.full(len(z), 0.7))
    assert p.mean == 0.7 and p.variance == 2.0


def test_prior_mean_enters_both_terms():
    prior = lambda z: np.asarray(z)[:, 0]  # noqa: E731
    ds = AgentDataset(noise_var=0.2).append((1.0, 0.0), 4.0)
    p = predict(ds, Kernel(1.5, 0.8), (1.5, 0.0), prior_mean=prior)
    mean, var = full_gpr(1.5, 0.8, [[1.0, 0.0]], [4.0], 0.2, [[1.5, 0.0]], prior=prior)
    assert p.mean == pytest.approx(mean[0], rel=1e-13)
    assert p.variance == pytest.approx(var[0], rel=1e-13)


def test_predict_many_matches_scalar(rng):
    ds = AgentDataset(noise_var=0.05)
    for z in rng.uniform(0, 10, size=(40, 2)):
        ds.append(z, float(rng.normal()))
    zs = rng.uniform(0, 10, size=(25, 2))
    k = Kernel(1.3, 0.4)
    mean, var = predict_many(ds, k, zs)
    for i, z in enumerate(zs):
        p = predict(ds, k, z)
        assert mean[i] == p.mean and var[i] == p.variance


def test_tracker_tie_break_keeps_earliest():
    tr = NearestTracker(np.array([[1.0, 0.0]]))
    tr.add((0, 0), 5.0, 0.1)
    tr.add((2, 0), 7.0, 0.1)
    assert tr.y[0] == 5.0


def test_dispersion_values():
    ds = AgentDataset().append((0, 0), 0.0)
    assert dispersion(ds, [[10, 10]]) == pytest.approx(math.sqrt(200))
    g = np.stack(np.meshgrid(np.linspace(0, 10, 40), np.linspace(0, 10, 40), indexing="ij"), -1).reshape(-1, 2)
    full = AgentDataset()
    for z in g:
        full.append(z, 0.0)
    assert dispersion(full, g) == 0.0


@settings(max_examples=100, deadline=None)
@given(
    st.lists(points, min_size=1, max_size=20, unique=True),
    st.floats(1.0, 10.0),
    st.floats(0.05, 5.0),
    st.floats(1e-3, 2.0),
)
def test_variance_sandwich(pts, s, ell_sq, noise):
    k = Kernel(s, ell_sq)
    ds = AgentDataset(noise_var=noise)
    for p in pts:
        ds.append(p, 0.0)
    probe = np.random.default_rng(0).uniform(-10, 10, size=(30, 2))
    lo, hi = variance_bounds(k, noise, float(dispersion(ds, probe) ** 2))
    _, var = predict_many(ds, k, probe)
    assert np.all(var >= lo * (1 - 1e-12))
    assert np.all(var <= hi * (1 + 1e-12))


def test_dense_sampling_variance_limit():
    k, noise = Kernel(1.0), 0.01
    g = np.stack(np.meshgrid(np.linspace(0, 1, 41), np.linspace(0, 1, 41), indexing="ij"), -1).reshape(-1, 2)
    ds = AgentDataset(noise_var=noise)
    for z in g:
        ds.append(z, 0.0)
    probe = g + 0.001
    d = dispersion(ds, probe)
    # var - target = (s^2 - kappa^2) / (s + noise); 1% needs kappa^2 >= s^2 - 0.01 s noise
    assert k.kappa(d) ** 2 >= 1 - 0.01 * noise
    _, var = predict_many(ds, k, probe)
    target = k.sigma_f_sq * noise / (k.sigma_f_sq + noise)
    np.testing.assert_allclose(var, target, rtol=0.01)


def test_kappa_0999_is_not_enough_for_one_percent():
    k, noise = Kernel(1.0), 0.01
    _, var = predict_many(AgentDataset(noise_var=noise).append((0, 0), 0.0), k, [[math.sqrt(-math.log(0.999) / 2), 0]])
    target = noise / (1 + noise)
    assert var[0] / target - 1 > 0.19
