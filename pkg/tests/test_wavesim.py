import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from impactloc.core import (
    DEFAULT_PLATE,
    DEFAULT_SENSORS,
    ImpactLocation,
    PlateGeometry,
    SensorArray,
    TdoaVector,
    default_array,
    grid_locations,
)
from impactloc.wavesim import (
    GvpModel,
    LaminateStiffness,
    NoiseModel,
    analytic_tdoa,
    apply_temperature_scaling,
    critical_delamination_load,
    critical_load_from_effective,
    effective_bending_stiffness,
    group_velocity,
    scale_tdoa,
    simulate_dataset,
    synthesize_signals,
    tone_burst_duration,
)


def test_group_velocity_reference_and_dispersion():
    g = GvpModel("isotropic", base_speed=5.0)
    np.testing.assert_allclose(group_velocity(g, np.linspace(0, 2 * np.pi, 7), 1.0), 5.0)
    np.testing.assert_allclose(group_velocity(g, 0.3, 4.0), 10.0)
    with pytest.raises(ValueError):
        group_velocity(g, 0.0, 0.0)


def test_group_velocity_elliptical():
    g = GvpModel("elliptical", base_speed=5.0, anisotropy=0.2)
    np.testing.assert_allclose(group_velocity(g, [0.0, np.pi / 2], 1.0), [6.0, 4.0])


def test_gvp_validation():
    with pytest.raises(ValueError):
        GvpModel("elliptical", base_speed=5.0, anisotropy=1.0)
    with pytest.raises(ValueError):
        GvpModel("isotropic", base_speed=-1.0)
    with pytest.raises(ValueError):
        GvpModel("tabulated")


def test_tabulated_profile_periodic():
    g = GvpModel("tabulated", table=((0.0, 4.0), (np.pi, 6.0)))
    # halfway between pi and 2 pi wraps back towards 4
    np.testing.assert_allclose(group_velocity(g, [np.pi / 2, 3 * np.pi / 2, 2 * np.pi], 1.0),
                               [5.0, 5.0, 4.0])


def test_analytic_tdoa_two_sensor_line():
    g = GvpModel("isotropic", base_speed=1.0)
    arr = SensorArray(((0, 0), (10, 0), (0, 30)))
    t = analytic_tdoa(g, arr, ImpactLocation(0, 0), 1.0)
    assert t.anchor_index == 0
    np.testing.assert_allclose(t.values, [0.0, 10.0, 30.0])


def test_rectangle_centre_is_singular():
    g = GvpModel("isotropic", base_speed=5.0)
    arr = SensorArray(DEFAULT_SENSORS[:4])
    t = analytic_tdoa(g, arr, ImpactLocation(145.0, 100.0), 1.0)
    np.testing.assert_array_equal(t.values, np.zeros(4))


def test_elliptical_rectangle_centre_is_singular():
    # mirror-symmetric sensors must get bit-identical speeds
    arr = SensorArray(DEFAULT_SENSORS[:4])
    t = analytic_tdoa(GvpModel("elliptical", 400.0, 1.0, 0.1), arr, ImpactLocation(145.0, 100.0), 1.0)
    np.testing.assert_array_equal(t.values, np.zeros(4))


def test_analytic_tdoa_brute_force_distances():
    g = GvpModel("isotropic", base_speed=5.0)
    p = grid_locations()[17]
    t = analytic_tdoa(g, default_array(), p, 1.0)
    arrivals = [math.hypot(sx - p.x, sy - p.y) / 5.0 for sx, sy in DEFAULT_SENSORS]
    expected = [a - min(arrivals) for a in arrivals]
    np.testing.assert_allclose(t.values, expected, rtol=0, atol=1e-12)


def test_noise_is_seeded():
    g = GvpModel("isotropic", base_speed=5.0)
    p = ImpactLocation(100, 80)
    a = analytic_tdoa(g, default_array(), p, 1.0, NoiseModel(0.01, 3))
    b = analytic_tdoa(g, default_array(), p, 1.0, NoiseModel(0.01, 3))
    assert a == b


def test_scale_tdoa_examples():
    t = TdoaVector((0.0, 0.2, 0.4), 0, 1.0)
    assert scale_tdoa(t, 1.0) == t
    t4 = TdoaVector((0.0, 0.2, 0.4), 0, 4.0)
    s = scale_tdoa(t4, 1.0)
    np.testing.assert_allclose(s.values, [0.0, 0.4, 0.8], atol=1e-15)
    assert s.frequency == 1.0
    with pytest.raises(ValueError):
        scale_tdoa(t, 0.0)


def test_temperature_scaling_examples():
    # shrinking a value near the snap tolerance must not merge it with the anchor
    tiny = TdoaVector.from_arrivals([1e-9, 0.0, 1.0], 1.0)
    np.testing.assert_array_equal(apply_temperature_scaling(tiny, 0.5).values, [5e-10, 0.0, 0.5])
    t = TdoaVector((0.0, 0.2, 0.4), 0, 1.0)
    assert apply_temperature_scaling(t, 1.0) == t
    np.testing.assert_allclose(apply_temperature_scaling(t, 1.15).values, [0.0, 0.23, 0.46], atol=1e-15)
    with pytest.raises(ValueError):
        apply_temperature_scaling(t, 0.0)


@given(arrays(np.float64, 5, elements=st.floats(0.0, 10.0)), st.floats(0.05, 20.0))
def test_temperature_scaling_preserves_direction(raw, alpha):
    t = TdoaVector.from_arrivals(raw, 1.0)
    s = apply_temperature_scaling(t, alpha)
    a, b = t.as_array(), s.as_array()
    if np.linalg.norm(a) > 0:
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        assert abs(cos - 1.0) <= 1e-12
    np.testing.assert_array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))


def _onset(sig, frac=1e-3):
    s = np.abs(sig.samples)
    return sig.times[np.flatnonzero(s > frac * s.max())[0]]


def test_synthesize_zero_distance_onset():
    g = GvpModel("isotropic", base_speed=10.0)
    arr = SensorArray(((0, 0), (10, 0), (0, 20)))
    sig = synthesize_signals(g, arr, ImpactLocation(0, 0), 1.0, sample_rate=200.0)[0]
    # the Gaussian window is ~1e-4 of peak at its edges, so the onset sits at the window start
    assert abs(_onset(sig, 1e-5)) <= sig.dt


def test_synthesize_delay_oracle():
    g = GvpModel("isotropic", base_speed=10.0)
    arr = SensorArray(((10, 0), (20, 0), (0, 50)))
    sigs = synthesize_signals(g, arr, ImpactLocation(0, 0), 1.0, sample_rate=200.0)
    assert abs((_onset(sigs[1], 1e-5) - _onset(sigs[0], 1e-5)) - 1.0) <= sigs[0].dt


def test_synthesize_deterministic_and_validated():
    g = GvpModel("isotropic", base_speed=5.0)
    a = synthesize_signals(g, default_array(), ImpactLocation(100, 90), 1.0, snr_db=20, seed=7)
    b = synthesize_signals(g, default_array(), ImpactLocation(100, 90), 1.0, snr_db=20, seed=7)
    assert all(x.samples.tobytes() == y.samples.tobytes() for x, y in zip(a, b))
    with pytest.raises(ValueError, match="sample_rate"):
        synthesize_signals(g, default_array(), ImpactLocation(100, 90), 1.0, sample_rate=5.0)
    assert tone_burst_duration(1.0) == 5.0


def test_isotropic_laminate_reduces_to_d():
    D, G = 150.0, 500.0
    lam = LaminateStiffness(D, D, D / 3, D / 3, G)
    assert math.isclose(effective_bending_stiffness(lam), D, rel_tol=1e-12)
    assert math.isclose(critical_delamination_load(lam),
                        math.pi * math.sqrt(32 * D * G / 3), rel_tol=1e-12)


def test_critical_load_reported_value():
    f = critical_load_from_effective(277.8, 700.0)
    assert abs(f - 4524.3) / 4524.3 < 5e-3


def test_critical_load_sqrt2_law():
    f1 = critical_load_from_effective(277.8, 700.0)
    f2 = critical_load_from_effective(277.8, 1400.0)
    assert abs(f2 / f1 - math.sqrt(2)) / math.sqrt(2) < 1e-9
    with pytest.raises(ValueError):
        critical_load_from_effective(0.0, 700.0)


def test_simulate_dataset_shapes_and_scaling():
    g = GvpModel("isotropic", base_speed=5.0)
    locs = grid_locations()
    ref = simulate_dataset(g, default_array(), DEFAULT_PLATE, locs, 1.0)
    hot = simulate_dataset(g, default_array(), DEFAULT_PLATE, locs, 1.0, temperature_alpha=1.15,
                           condition="TEM")
    assert len(ref) == 35 and ref.impact_ids[0] == "REF-001"
    np.testing.assert_allclose(hot.X, 1.15 * ref.X, rtol=1e-12, atol=1e-12)
    reps = simulate_dataset(g, default_array(), DEFAULT_PLATE, locs[:3], 1.0, repetitions=2)
    assert len(reps) == 6 and reps.impact_ids[-1] == "REF-003-r2"
    with pytest.raises(ValueError, match="outside"):
        simulate_dataset(g, default_array(), DEFAULT_PLATE, [ImpactLocation(400, 10)], 1.0)
    with pytest.raises(ValueError):
        simulate_dataset(g, default_array(), PlateGeometry(100, 100, 4), locs, 1.0)


@settings(max_examples=50)
@given(st.floats(20, 270), st.floats(20, 180))
def test_tdoa_bounded_by_array_extent(x, y):
    # triangle inequality: no TDOA exceeds the array diameter over the speed
    g = GvpModel("isotropic", 400.0)
    t = analytic_tdoa(g, default_array(), ImpactLocation(x, y), 1.0)
    pts = np.asarray(DEFAULT_SENSORS)
    diam = max(np.linalg.norm(a - b) for a in pts for b in pts)
    assert max(t.values) <= diam / 400.0 + 1e-12
