import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phaselab.bloch import (
    CouplingSpec,
    DetectorChannel,
    DetectorSetup,
    SphericalDirection,
    UnitVector3,
    X_AXIS,
    Z_AXIS,
    beam_splitter_directions,
    continuous_coupled_setup,
    coupled_detector_direction,
    direct_detection_setup,
    direction_to_vector,
    pulsed_counterrotated_directions,
    pulsed_setup,
    reduce_angle,
    single_beam_splitter_setup,
    two_beam_splitter_setup,
)

angles = st.floats(-20.0, 20.0, allow_nan=False)
thetas = st.floats(0.0, math.pi)


def close(v: UnitVector3, expected, tol=1e-12):
    return np.allclose(v.as_array(), expected, atol=tol)


@pytest.mark.parametrize(
    "theta, phi, expected",
    [
        (math.pi / 2, 0.0, (1, 0, 0)),
        (0.0, 1.234, (0, 0, 1)),
        (math.pi / 2, math.pi / 2, (0, 1, 0)),
    ],
)
def test_direction_to_vector_axes(theta, phi, expected):
    assert close(direction_to_vector(SphericalDirection(theta, phi)), expected)


def test_direction_to_vector_norm_many():
    rng = np.random.default_rng(1)
    theta = rng.uniform(0, math.pi, 100_000)
    phi = rng.uniform(-10, 10, 100_000)
    worst = 0.0
    for t, p in zip(theta, phi):
        v = direction_to_vector(SphericalDirection(t, p))
        worst = max(worst, abs(math.sqrt(v.x * v.x + v.y * v.y + v.z * v.z) - 1.0))
    assert worst < 1e-12


@given(thetas, angles)
def test_round_trip_through_vector(theta, phi):
    d = SphericalDirection(theta, phi)
    back = direction_to_vector(d).to_direction()
    assert direction_to_vector(back).as_array() == pytest.approx(direction_to_vector(d).as_array(), abs=1e-12)


@given(angles)
def test_reduce_angle_range(phi):
    r = reduce_angle(phi)
    assert 0.0 <= r < 2 * math.pi
    assert math.cos(r) == pytest.approx(math.cos(phi), abs=1e-9)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        SphericalDirection(-0.1, 0.0)
    with pytest.raises(ValueError):
        UnitVector3(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        DetectorChannel("x", Z_AXIS, 0.0)
    with pytest.raises(ValueError):
        DetectorSetup("bad", (DetectorChannel("a", Z_AXIS, 0.3),))
    with pytest.raises(ValueError):
        DetectorSetup("dup", (DetectorChannel("a", Z_AXIS, 0.5), DetectorChannel("a", -Z_AXIS, 0.5)))
    with pytest.raises(ValueError):
        CouplingSpec(-1.0)


def test_beam_splitter_azimuths_half_pi():
    chans = beam_splitter_directions(math.pi / 2)
    az = [c.direction_at().to_direction().phi for c in chans]
    assert az == pytest.approx([0, math.pi, math.pi / 2, 3 * math.pi / 2], abs=1e-12)
    assert all(c.weight == 0.25 for c in chans)


def test_beam_splitter_degenerate_settings():
    c0 = beam_splitter_directions(0.0)
    assert close(c0[2].direction_at(), c0[0].direction_at().as_array())
    assert close(c0[3].direction_at(), c0[1].direction_at().as_array())
    cpi = beam_splitter_directions(math.pi)
    assert close(cpi[2].direction_at(), cpi[1].direction_at().as_array())


SETUPS = [
    two_beam_splitter_setup(math.pi / 2),
    two_beam_splitter_setup(0.7),
    single_beam_splitter_setup(1.1),
    direct_detection_setup(),
    pulsed_setup(CouplingSpec(1.0, 0.0, "pulsed", 0.4)),
    continuous_coupled_setup(CouplingSpec(1.0, 0.3, "continuous")),
]


@pytest.mark.parametrize("setup", SETUPS, ids=lambda s: s.name)
@given(thetas, angles, st.floats(0.0, 10.0))
@settings(max_examples=50)
def test_total_gain_is_one(setup, theta, phi, t):
    u = direction_to_vector(SphericalDirection(theta, phi))
    assert setup.total_gain(u, t) == pytest.approx(1.0, abs=1e-12)


def test_coupled_direction_examples():
    c = CouplingSpec(1.0, 0.0, "continuous")
    assert close(coupled_detector_direction(c, math.pi / 2, "a"), (0, -1, 0))
    assert close(coupled_detector_direction(c, 0.0, "a"), (0, 0, 1))
    c2 = CouplingSpec(1.0, 1.0, "continuous")
    assert close(coupled_detector_direction(c2, 2 * math.pi / c2.omega, "a"), (0, 0, 1))
    assert close(coupled_detector_direction(CouplingSpec(), 3.0, "b"), (0, 0, -1))
    with pytest.raises(ValueError):
        coupled_detector_direction(c, 0.0, "c")


@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0), st.floats(0.0, 50.0))
def test_coupled_direction_properties(delta, eps, t):
    c = CouplingSpec(delta, eps, "continuous")
    ua = coupled_detector_direction(c, t, "a")
    ub = coupled_detector_direction(c, t, "b")
    assert ua.dot(ua) == pytest.approx(1.0, abs=1e-12)
    assert ub.as_array() == pytest.approx(-ua.as_array(), abs=0)
    later = coupled_detector_direction(c, t + c.period, "a")
    assert later.as_array() == pytest.approx(ua.as_array(), abs=1e-12 * max(1.0, t))


def test_pulsed_directions():
    a, b = pulsed_counterrotated_directions(CouplingSpec(1.0, 0.0, "pulsed", math.pi / 2))
    assert close(a.direction, (0, -1, 0)) and close(b.direction, (0, 1, 0))
    a, b = pulsed_counterrotated_directions(CouplingSpec(1.0, 0.0, "pulsed", 0.0))
    assert close(a.direction, (0, 0, 1)) and close(b.direction, (0, 0, -1))
    a, _ = pulsed_counterrotated_directions(CouplingSpec(1.0, 0.0, "pulsed", math.pi))
    assert close(a.direction, (0, 0, -1))
    with pytest.raises(ValueError):
        pulsed_counterrotated_directions(CouplingSpec(1.0))


def test_pulsed_matches_continuous_at_pulse_end():
    c = CouplingSpec(1.3, 0.0, "continuous")
    tau = 0.8
    a, _ = pulsed_counterrotated_directions(CouplingSpec(1.3, 0.0, "pulsed", tau))
    assert close(a.direction, coupled_detector_direction(c, tau, "a").as_array())


def test_setup_accessors():
    s = two_beam_splitter_setup(1.0)
    assert len(s) == 4 and s.ids == ["1", "2", "3", "4"] and s.index("3") == 2
    assert s.is_static and not continuous_coupled_setup(CouplingSpec(1.0, 0, "continuous")).is_static
    assert s[0].gain(X_AXIS) == pytest.approx(0.5)
