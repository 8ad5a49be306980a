import math

import numpy as np
import pytest

from shapeservo.errors import ConfigError, OutOfRange, VelocityLimit
from shapeservo.plant import (
    DisturbanceEvent,
    PlantConfig,
    PlantState,
    Section,
    SensorModel,
    Simulator,
    arc_fraction,
    forward_shape,
    measure,
    plant_jacobian_fd,
    preset,
    step,
)


def test_zero_actuation_is_straight():
    cfg = preset("racs2")
    pts = forward_shape(cfg, np.zeros(2))
    L = cfg.rest_length
    expected = np.column_stack([np.linspace(L, 0, cfg.n_points), np.zeros(cfg.n_points), np.zeros(cfg.n_points)])
    assert np.allclose(pts, expected, atol=1e-12)


def test_quarter_circle_endpoint_matches_closed_form():
    cfg = preset("racs2")
    theta = math.pi / 2
    q = np.array([theta / 2.0, 0.0])  # gain 2 rad per unit
    tip = forward_shape(cfg, q)[0]
    L = cfg.rest_length
    assert np.allclose(tip, [L / theta * math.sin(theta), L / theta * (1 - math.cos(theta)), 0.0], atol=1e-9)


def test_points_keep_arc_length():
    cfg = preset("scm6")
    q = np.array([0.3, -0.2, 0.1, 0.4, 0.0, -0.3])
    pts = forward_shape(cfg, q)
    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    ext = (cfg.cable_gain_matrix @ q).reshape(-1, 3)[:, 2]
    lengths = np.array([s.rest_length for s in cfg.sections]) + ext
    per = (cfg.n_points - 1) // 2
    # chords shorter than arcs but by little for short segments
    assert np.all(chord <= np.repeat(lengths[::-1] / per, per) + 1e-9)
    assert abs(chord.sum() - lengths.sum()) / lengths.sum() < 1e-3


def test_mirror_symmetry():
    cfg = preset("racs2")
    a = forward_shape(cfg, np.array([0.2, 0.3]))
    b = forward_shape(cfg, np.array([0.2, -0.3]))
    assert np.allclose(a * [1, 1, -1], b, atol=1e-12)


def test_arc_fraction_ends():
    f = arc_fraction(preset("scm6"), np.zeros(6))
    assert f[0] == 1.0 and f[-1] == 0.0 and np.all(np.diff(f) < 0)


def test_fd_jacobian_two_sided_vs_one_sided():
    cfg = preset("racs2")
    q = np.array([0.2, 0.1])
    J = plant_jacobian_fd(cfg, q, "two_points")
    h = 1e-6
    base = forward_shape(cfg, q)[[0, 12]].reshape(-1)
    one = np.column_stack([(forward_shape(cfg, q + h * np.eye(2)[a])[[0, 12]].reshape(-1) - base) / h
                           for a in range(2)])
    assert np.linalg.norm(J - one) / np.linalg.norm(J) < 1e-4


def _plant(gains):
    return PlantConfig("t", [Section(100.0)], 9, np.array(gains, dtype=float), -np.ones(2), np.ones(2),
                       markers={"two_points": (0, 4)})


def test_duplicate_gain_columns_give_equal_jacobian_columns():
    with pytest.raises(ConfigError):
        _plant([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])  # rank deficient is rejected up front
    cfg = _plant([[1.0, 1.0], [0.5, 0.5 + 1e-9], [0.0, 0.0]])
    J = plant_jacobian_fd(cfg, np.array([0.1, 0.1]), "two_points")
    assert np.allclose(J[:, 0], J[:, 1], atol=1e-5)


def test_doubling_gains_doubles_jacobian_at_rest():
    a = _plant([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    b = _plant([[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    Ja = plant_jacobian_fd(a, np.zeros(2), "two_points")
    Jb = plant_jacobian_fd(b, np.zeros(2), "two_points")
    assert np.allclose(Jb, 2 * Ja, atol=1e-6)


def test_static_noiseless_measurement_is_exact():
    cfg = preset("racs2")
    state = PlantState(np.array([0.1, -0.2]))
    sensor = SensorModel(position_noise_std=0.0)
    state, pts = step(state, cfg, np.zeros(2), 0.05, sensor)
    assert np.array_equal(pts, forward_shape(cfg, state.q))
    assert np.array_equal(measure(state, cfg, sensor), pts)


def test_impulse_shows_up_at_onset():
    cfg = preset("racs2")
    ev = DisturbanceEvent("impulse", onset=0.1, offset=(0, 0, 5), decay=1.0)
    sensor = SensorModel(position_noise_std=0.0, rate_hz=20.0)
    state = PlantState(np.array([0.1, 0.2]), active_disturbances=[ev])
    pts = []
    for _ in range(3):
        state, p = step(state, cfg, np.zeros(2), 0.05, sensor)
        pts.append(p)
    clean = forward_shape(cfg, state.q)
    assert np.allclose(pts[0], clean)
    assert np.allclose(pts[1][0] - clean[0], [0, 0, 5])
    assert np.allclose(pts[1][-1], clean[-1])  # base is anchored


def test_contact_plane_limits_penetration():
    cfg = preset("racs2")
    q = np.array([0.5, 0.0])
    clean = forward_shape(cfg, q)
    wall = clean[0, 1] - 5.0
    ev = DisturbanceEvent("contact_spring", point=(0, wall, 0), normal=(0, -1, 0), stiffness=2.0, force=1.0)
    sim = Simulator(cfg, q, "two_points", SensorModel(position_noise_std=0.0), [ev])
    sim.command(np.zeros(2), 0.05)
    assert sim.points[:, 1].max() <= wall + 0.5 + 1e-9


def test_velocity_limit_and_range():
    cfg = preset("racs2")
    with pytest.raises(VelocityLimit):
        step(PlantState(np.zeros(2)), cfg, np.array([2.0, 0.0]), 0.05, SensorModel())
    with pytest.raises(OutOfRange):
        forward_shape(cfg, np.array([1.5, 0.0]))


def test_sensor_zero_order_hold_and_determinism():
    cfg = preset("racs2")

    def stream(seed):
        sensor = SensorModel(position_noise_std=0.1, rate_hz=25.0, seed=seed)
        state = PlantState(np.zeros(2) + 0.2, seed=seed)
        out = []
        for _ in range(10):
            state, p = step(state, cfg, np.array([0.1, -0.1]), 0.05, sensor)
            out.append(p)
        return np.array(out), sensor

    a, sa = stream(3)
    b, _ = stream(3)
    assert np.array_equal(a, b)
    # 25 Hz sensor over 0.5 s: initial sample plus 12 more (t = 0.04 .. 0.48)
    assert sa.next_sample == 13
