"""Shape features computed from sampled backbone points.

Backbone points are stored as an ``(l, 3)`` array in millimetres, distal
endpoint first and base attachment last. Angles are reported in degrees.

Marker conventions (indices into the backbone array):

* ``TWO_POINTS``: ``(distal, middle)``; extra entries are ignored.
* ``BTA``:        ``(distal, middle, base)``.
* ``DEP_BTA``:    ``(distal, mid_distal, junction, mid_proximal, base)``; the
  first bending angle belongs to the distal section, the second to the
  proximal one, and the twist is taken at the distal endpoint.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadMarkers, CoincidentPoints, DegenerateTwist, NearSingularFeature

COINCIDENT_TOL = 1e-9  # mm
SINGULAR_BEND_TOL = 0.01  # degrees away from 0 or 180


class FeatureKind(str, enum.Enum):
    TWO_POINTS = "two_points"
    BTA = "bta"
    DEP_BTA = "dep_bta"

    @property
    def dim(self) -> int:
        return FEATURE_DIMS[self]

    @property
    def n_markers(self) -> int:
        return {FeatureKind.TWO_POINTS: 2, FeatureKind.BTA: 3, FeatureKind.DEP_BTA: 5}[self]


FEATURE_DIMS = {FeatureKind.TWO_POINTS: 6, FeatureKind.BTA: 2, FeatureKind.DEP_BTA: 6}


@dataclass(frozen=True)
class ShapeFeature:
    kind: FeatureKind
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.kind.dim,):
            raise ValueError(f"{self.kind.value} expects {self.kind.dim} values, got {self.values.shape}")


def as_points(r) -> np.ndarray:
    """Coerce stacked ``(3l,)`` or ``(l, 3)`` coordinates to an ``(l, 3)`` array."""
    pts = np.asarray(r, dtype=float)
    if pts.ndim == 1:
        if pts.size % 3:
            raise ValueError("stacked coordinates must have length 3*l")
        pts = pts.reshape(-1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise ValueError("backbone needs at least two 3-D points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("backbone contains non-finite coordinates")
    return pts


def bending_angle(r1, r2, r3) -> float:
    """Angle in degrees at ``r2`` between the legs towards ``r1`` and ``r3``.

    Evaluated as ``atan2(|a x b|, a . b)``, which equals the arccos of the
    normalised dot product but keeps full precision near 0 and 180 degrees.
    """
    a = np.asarray(r1, dtype=float) - np.asarray(r2, dtype=float)
    b = np.asarray(r3, dtype=float) - np.asarray(r2, dtype=float)
    if np.linalg.norm(a) < COINCIDENT_TOL or np.linalg.norm(b) < COINCIDENT_TOL:
        raise CoincidentPoints("bending angle undefined for coincident reference points")
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)))


def twist_angle(r_e) -> float:
    """Rotation of ``r_e`` about the base x-axis, in degrees within (-180, 180]."""
    _, y, z = np.asarray(r_e, dtype=float)
    if y * y + z * z < COINCIDENT_TOL**2:
        raise DegenerateTwist("twist undefined for a point on the base x-axis")
    phi = float(np.degrees(np.arctan2(z, y)))
    if phi <= -180.0:
        phi += 360.0
    return phi


def _check_markers(kind: FeatureKind, n_points: int, markers: Sequence[int]) -> list[int]:
    idx = [int(i) for i in markers]
    if len(idx) < kind.n_markers:
        raise BadMarkers(f"{kind.value} needs {kind.n_markers} markers, got {len(idx)}")
    idx = idx[: kind.n_markers]
    for i in idx:
        if not -n_points <= i < n_points:
            raise BadMarkers(f"marker {i} out of range for {n_points} points")
    return [i % n_points for i in idx]


def extract_feature(kind: FeatureKind | str, r, section_markers: Sequence[int]) -> ShapeFeature:
    kind = FeatureKind(kind)
    pts = as_points(r)
    idx = _check_markers(kind, len(pts), section_markers)
    if kind is FeatureKind.TWO_POINTS:
        values = np.concatenate([pts[idx[0]], pts[idx[1]]])
    elif kind is FeatureKind.BTA:
        d, mid, base = (pts[i] for i in idx)
        values = np.array([bending_angle(d, mid, base), twist_angle(d)])
    else:
        d, m1, j, m2, base = (pts[i] for i in idx)
        values = np.concatenate([d, [bending_angle(d, m1, j), bending_angle(j, m2, base), twist_angle(d)]])
    return ShapeFeature(kind, values)


def _bend_gradient(r1, r2, r3):
    """Gradients (deg/mm) of the bending angle w.r.t. r1, r2, r3."""
    a, b = r1 - r2, r3 - r2
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < COINCIDENT_TOL or nb < COINCIDENT_TOL:
        raise CoincidentPoints("bending angle undefined for coincident reference points")
    c = np.clip(a @ b / (na * nb), -1.0, 1.0)
    kappa = np.degrees(np.arccos(c))
    if kappa > 180.0 - SINGULAR_BEND_TOL or kappa < SINGULAR_BEND_TOL:
        raise NearSingularFeature(f"bending angle {kappa:.4f} deg too close to a straight/folded configuration")
    dk_dc = -np.degrees(1.0) / np.sqrt(1.0 - c * c)
    g1 = dk_dc * (b / (na * nb) - c * a / na**2)
    g3 = dk_dc * (a / (na * nb) - c * b / nb**2)
    return g1, -(g1 + g3), g3


def _twist_gradient(r_e):
    _, y, z = r_e
    rho2 = y * y + z * z
    if rho2 < COINCIDENT_TOL**2:
        raise DegenerateTwist("twist undefined for a point on the base x-axis")
    return np.degrees(1.0) * np.array([0.0, -z / rho2, y / rho2])


def feature_jacobian(kind: FeatureKind | str, r, section_markers: Sequence[int]) -> np.ndarray:
    """Analytic ``m x 3l`` derivative of the feature w.r.t. stacked coordinates."""
    kind = FeatureKind(kind)
    pts = as_points(r)
    idx = _check_markers(kind, len(pts), section_markers)
    jac = np.zeros((kind.dim, 3 * len(pts)))

    def put(row, point, grad):
        jac[row, 3 * point : 3 * point + 3] += grad

    eye = np.eye(3)
    if kind is FeatureKind.TWO_POINTS:
        for row in range(3):
            put(row, idx[0], eye[row])
            put(3 + row, idx[1], eye[row])
    elif kind is FeatureKind.BTA:
        for p, g in zip(idx, _bend_gradient(*(pts[i] for i in idx))):
            put(0, p, g)
        put(1, idx[0], _twist_gradient(pts[idx[0]]))
    else:
        d, m1, j, m2, base = idx
        for row in range(3):
            put(row, d, eye[row])
        for p, g in zip((d, m1, j), _bend_gradient(pts[d], pts[m1], pts[j])):
            put(3, p, g)
        for p, g in zip((j, m2, base), _bend_gradient(pts[j], pts[m2], pts[base])):
            put(4, p, g)
        put(5, d, _twist_gradient(pts[d]))
    return jac
