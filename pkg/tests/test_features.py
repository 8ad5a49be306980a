import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeservo.errors import BadMarkers, CoincidentPoints, DegenerateTwist, NearSingularFeature
from shapeservo.features import FeatureKind, bending_angle, extract_feature, feature_jacobian, twist_angle


def reference_angle(r1, r2, r3):
    """Law-of-cosines arccos in 50-digit arithmetic."""
    with mpmath.workdps(50):
        a = [mpmath.mpf(u) - mpmath.mpf(v) for u, v in zip(r1, r2)]
        b = [mpmath.mpf(u) - mpmath.mpf(v) for u, v in zip(r3, r2)]
        dot = sum(x * y for x, y in zip(a, b))
        c = dot / (mpmath.sqrt(sum(x * x for x in a)) * mpmath.sqrt(sum(y * y for y in b)))
        return float(mpmath.degrees(mpmath.acos(max(min(c, 1), -1))))


@pytest.mark.parametrize("pts, expected", [
    ([(0, 0, 0), (1, 0, 0), (2, 0, 0)], 180.0),
    ([(1, 0, 0), (0, 0, 0), (0, 1, 0)], 90.0),
    ([(1, 1, 0), (0, 0, 0), (1, 0, 0)], 45.0),
])
def test_bending_angle_trivial(pts, expected):
    assert abs(bending_angle(*pts) - expected) < 1e-9


@pytest.mark.parametrize("r_e, expected", [((5, 1, 0), 0.0), ((5, 0, 1), 90.0), ((5, -1, 0), 180.0),
                                           ((5, 0, -1), -90.0)])
def test_twist_angle_trivial(r_e, expected):
    assert abs(twist_angle(r_e) - expected) < 1e-9


def test_twist_range_excludes_minus_180():
    assert twist_angle((0.0, -1.0, -0.0)) == 180.0


def test_degenerate_inputs():
    with pytest.raises(CoincidentPoints):
        bending_angle((1, 0, 0), (1, 0, 0), (2, 0, 0))
    with pytest.raises(DegenerateTwist):
        twist_angle((3.0, 0.0, 0.0))


finite = st.floats(-50, 50, allow_nan=False)
point = st.tuples(finite, finite, finite)


@settings(max_examples=200, deadline=None)
@given(point, point, point)
def test_bending_matches_high_precision_oracle(r1, r2, r3):
    a, b = np.subtract(r1, r2), np.subtract(r3, r2)
    if min(np.linalg.norm(a), np.linalg.norm(b)) < 1e-3:
        return
    assert abs(bending_angle(r1, r2, r3) - reference_angle(r1, r2, r3)) < 1e-9


def straight(l=9, spacing=10.0):
    return np.column_stack([np.arange(l)[::-1] * spacing, np.zeros(l), np.zeros(l)])


def test_two_points_is_verbatim_stacking():
    r = straight()
    x = extract_feature("two_points", r, (0, 4)).values
    assert np.array_equal(x, np.concatenate([r[0], r[4]]))


def test_bta_on_straight_backbone_raises():
    with pytest.raises(DegenerateTwist):
        extract_feature("bta", straight(), (0, 4, 8))


def planar_arc(l, radius, angle):
    s = np.linspace(0, angle, l)[::-1]
    return np.column_stack([radius * np.sin(s), radius * (1 - np.cos(s)), np.zeros(l)])


def test_dep_bta_planar_c_bend():
    r = planar_arc(9, 50.0, math.pi / 2)
    x = extract_feature("dep_bta", r, (0, 2, 4, 6, 8)).values
    assert x.shape == (6,)
    assert np.allclose(x[:3], r[0])
    assert abs(x[3] - x[4]) < 1e-9
    assert abs(x[5]) < 1e-9


def test_marker_validation():
    with pytest.raises(BadMarkers):
        extract_feature("bta", straight(), (0, 4))
    with pytest.raises(BadMarkers):
        extract_feature("two_points", straight(), (0, 40))


def test_two_points_jacobian_is_selector():
    J = feature_jacobian("two_points", straight(), (0, 4))
    assert set(np.unique(J)) == {0.0, 1.0}
    assert J.sum() == 6


def test_twist_gradient_has_no_axial_component():
    r = np.array([[5.0, 1.0, 0.0], [2.0, 0.5, 0.3], [0.0, 0.0, 0.0]])
    J = feature_jacobian("bta", r, (0, 1, 2))
    assert J[1, 0] == 0.0


def fd_jacobian(kind, r, markers, h=1e-5):
    flat = r.reshape(-1)
    cols = []
    for c in range(flat.size):
        d = np.zeros_like(flat)
        d[c] = h
        plus = extract_feature(kind, (flat + d).reshape(-1, 3), markers).values
        minus = extract_feature(kind, (flat - d).reshape(-1, 3), markers).values
        cols.append((plus - minus) / (2 * h))
    return np.column_stack(cols)


@pytest.mark.parametrize("kind, markers", [(FeatureKind.TWO_POINTS, (0, 3)), (FeatureKind.BTA, (0, 3, 6)),
                                           (FeatureKind.DEP_BTA, (0, 2, 3, 4, 6))])
def test_feature_jacobian_vs_finite_differences(kind, markers):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        r = rng.normal(0, 30, (7, 3))
        J = feature_jacobian(kind, r, markers)
        Jfd = fd_jacobian(kind, r, markers)
        worst = max(worst, np.linalg.norm(J - Jfd) / np.linalg.norm(Jfd))
    assert worst < 1e-6


def test_near_straight_jacobian_raises():
    r = straight(5)
    r[0, 1:] = (1e-6, 1e-3)  # twist defined, bend within 0.01 deg of straight
    with pytest.raises(NearSingularFeature):
        feature_jacobian("bta", r, (0, 2, 4))
