"""Ground-truth continuum robot simulator.

Each section is a constant-curvature arc whose bend vector (rad, in the local
y-z plane) and extension (mm) are affine in the actuator vector through
``cable_gain_matrix``. Backbone points are sampled uniformly in arc length
within every section and returned distal endpoint first.

The controller only ever sees :func:`step` / :func:`measure` output; the
analytic shape and :func:`plant_jacobian_fd` exist for oracles and tests.
"""
from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, OutOfRange, VelocityLimit
from .features import FeatureKind, extract_feature

RANGE_TOL = 1e-12


@dataclass(frozen=True)
class Section:
    rest_length: float
    extensible: bool = False
    cable_count: int = 2


@dataclass
class PlantConfig:
    name: str
    sections: list[Section]
    n_points: int
    # rows per section: [bend_y (rad), bend_z (rad), extension (mm)]
    cable_gain_matrix: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    qdot_max: float = 1.0
    markers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cable_gain_matrix = np.asarray(self.cable_gain_matrix, dtype=float)
        self.q_min = np.asarray(self.q_min, dtype=float)
        self.q_max = np.asarray(self.q_max, dtype=float)
        n_sec = len(self.sections)
        if n_sec == 0:
            raise ConfigError("plant needs at least one section")
        if self.cable_gain_matrix.shape != (3 * n_sec, self.n):
            raise ConfigError("cable_gain_matrix must be (3 * sections, n)")
        if self.n_points < 5 or (self.n_points - 1) % n_sec:
            raise ConfigError("n_points must be >= 5 with (n_points - 1) divisible by the section count")
        if any(s.rest_length <= 0 for s in self.sections):
            raise ConfigError("section lengths must be positive")
        if np.any(self.q_max <= self.q_min) or self.q_min.shape != (self.n,):
            raise ConfigError("bad actuator limits")
        for s, sec in enumerate(self.sections):
            if not sec.extensible and np.any(self.cable_gain_matrix[3 * s + 2] != 0):
                raise ConfigError(f"section {s} is not extensible but has extension gains")
        if np.linalg.matrix_rank(self.cable_gain_matrix) < self.n:
            raise ConfigError("cable_gain_matrix must have full column rank")

    @property
    def n(self) -> int:
        return self.cable_gain_matrix.shape[1]

    @property
    def rest_length(self) -> float:
        return sum(s.rest_length for s in self.sections)

    def markers_for(self, kind: FeatureKind | str) -> tuple[int, ...]:
        kind = FeatureKind(kind)
        if kind.value not in self.markers:
            raise ConfigError(f"plant {self.name!r} has no markers for {kind.value}")
        return tuple(self.markers[kind.value])

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise OutOfRange(f"expected {self.n} actuator values, got shape {q.shape}")
        if np.any(q < self.q_min - RANGE_TOL) or np.any(q > self.q_max + RANGE_TOL):
            raise OutOfRange(f"actuator vector {q} outside limits")
        return q


def _section_params(cfg: PlantConfig, q: np.ndarray):
    p = (cfg.cable_gain_matrix @ q).reshape(-1, 3)
    lengths = np.array([s.rest_length for s in cfg.sections]) + p[:, 2]
    if np.any(lengths <= 0):
        raise OutOfRange("actuation collapses a section to non-positive length")
    return p[:, :2], lengths


def _arc_points(bend: np.ndarray, length: float, frac: np.ndarray):
    """Local positions (len(frac), 3) along one constant-curvature section.

    Written with sinc so the straight configuration needs no special case.
    """
    theta = math.hypot(bend[0], bend[1])
    a = theta * frac
    u = length * frac
    tangential = u * np.sinc(a / np.pi)
    lateral = (u * frac / 2.0 * np.sinc(a / (2 * np.pi)) ** 2)[:, None] * bend[None, :]
    return np.column_stack([tangential, lateral])


def forward_shape(cfg: PlantConfig, q) -> np.ndarray:
    """Noise-free backbone ``(l, 3)`` in mm, distal endpoint first, base at the origin."""
    q = cfg.check_q(q)
    bends, lengths = _section_params(cfg, q)
    per = (cfg.n_points - 1) // len(cfg.sections)
    frac = np.linspace(0.0, 1.0, per + 1)
    origin = np.zeros(3)
    rot = Rotation.identity()
    chunks = [origin[None, :]]
    for bend, length in zip(bends, lengths):
        local = _arc_points(bend, length, frac)
        world = origin + rot.apply(local)
        chunks.append(world[1:])
        origin = world[-1]
        rot = rot * Rotation.from_rotvec([0.0, -bend[1], bend[0]])
    pts = np.vstack(chunks)
    return pts[::-1].copy()


def arc_fraction(cfg: PlantConfig, q) -> np.ndarray:
    """Normalised arc-length position (0 at base, 1 at tip) of each sample, distal first."""
    _, lengths = _section_params(cfg, cfg.check_q(q))
    per = (cfg.n_points - 1) // len(cfg.sections)
    s = [0.0]
    for length in lengths:
        s.extend(s[-1] + length * np.linspace(0, 1, per + 1)[1:])
    s = np.asarray(s)
    return (s / s[-1])[::-1]


def plant_jacobian_fd(cfg: PlantConfig, q, kind: FeatureKind | str, markers: Sequence[int] | None = None,
                      h: float = 1e-5) -> np.ndarray:
    """Central-difference ``m x n`` Jacobian of the feature map (oracle only)."""
    kind = FeatureKind(kind)
    q = cfg.check_q(q)
    if np.any(q - h < cfg.q_min) or np.any(q + h > cfg.q_max):
        raise OutOfRange("finite-difference stencil leaves the actuator limits")
    markers = cfg.markers_for(kind) if markers is None else markers

    def feat(qq):
        return extract_feature(kind, forward_shape(cfg, qq), markers).values

    cols = []
    for a in range(cfg.n):
        dq = np.zeros(cfg.n)
        dq[a] = h
        cols.append((feat(q + dq) - feat(q - dq)) / (2 * h))
    return np.column_stack(cols)


# --------------------------------------------------------------------------- disturbances


class DisturbanceKind(str, enum.Enum):
    IMPULSE = "impulse"
    TIP_PAYLOAD = "tip_payload"
    CONTACT_SPRING = "contact_spring"
    ACTUATION_NOISE = "actuation_noise"


@dataclass(frozen=True)
class DisturbanceEvent:
    """A scheduled disturbance.

    impulse:          ``offset`` (mm, applied fully at the tip and ramped to zero at the
                      base), fading linearly to zero over ``decay`` seconds.
    tip_payload:      points sag along ``gravity`` by ``gain * arm * frac**2`` where
                      ``arm`` is the tip's moment arm about the base.
    contact_spring:   plane through ``point`` with outward ``normal``; penetration is
                      pushed back so at most ``force / stiffness`` mm remains.
    actuation_noise:  Gaussian perturbation with ``std`` added to the integrated q.
    """

    kind: DisturbanceKind
    onset: float = 0.0
    offset: tuple = (0.0, 0.0, 0.0)
    decay: float = 0.5
    gain: float = 0.0
    gravity: tuple = (0.0, 0.0, -1.0)
    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    stiffness: float = 0.0
    force: float = 1.0
    std: float = 0.0
    duration: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", DisturbanceKind(self.kind))
        if self.onset < 0 or self.stiffness < 0 or self.std < 0 or self.decay <= 0 or self.force < 0:
            raise ConfigError(f"invalid disturbance parameters: {self}")

    def active(self, t: float) -> bool:
        if self.kind is DisturbanceKind.IMPULSE:
            return self.onset <= t < self.onset + self.decay
        return self.onset <= t < self.onset + self.duration

    def apply(self, pts: np.ndarray, frac: np.ndarray, t: float) -> np.ndarray:
        if not self.active(t):
            return pts
        if self.kind is DisturbanceKind.IMPULSE:
            fade = 1.0 - (t - self.onset) / self.decay
            return pts + fade * frac[:, None] * np.asarray(self.offset, dtype=float)[None, :]
        if self.kind is DisturbanceKind.TIP_PAYLOAD:
            g = np.asarray(self.gravity, dtype=float)
            g = g / np.linalg.norm(g)
            tip = pts[0]
            arm = np.linalg.norm(tip - (tip @ g) * g)
            return pts + self.gain * arm * (frac**2)[:, None] * g[None, :]
        if self.kind is DisturbanceKind.CONTACT_SPRING:
            if self.stiffness == 0:
                return pts
            nrm = np.asarray(self.normal, dtype=float)
            nrm = nrm / np.linalg.norm(nrm)
            depth = -(pts - np.asarray(self.point, dtype=float)) @ nrm
            allowed = self.force / self.stiffness
            push = np.clip(depth - allowed, 0.0, None)
            return pts + push[:, None] * nrm[None, :]
        return pts


# --------------------------------------------------------------------------- stepping


@dataclass
class SensorModel:
    position_noise_std: float = 0.1
    rate_hz: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if self.position_noise_std < 0 or self.rate_hz <= 0:
            raise ConfigError("sensor needs std >= 0 and rate_hz > 0")
        self.rng = np.random.default_rng(self.seed)
        self.next_sample = 0
        self.last_sample: np.ndarray | None = None

    def reset(self):
        self.__post_init__()


@dataclass
class PlantState:
    q: np.ndarray
    t: float = 0.0
    active_disturbances: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.rng = np.random.default_rng([self.seed, 1])

    def copy(self) -> "PlantState":
        return copy.deepcopy(self)


def true_shape(cfg: PlantConfig, q, t: float, disturbances: Sequence[DisturbanceEvent]) -> np.ndarray:
    """Backbone with disturbances applied in order, before sensor noise."""
    pts = forward_shape(cfg, q)
    frac = arc_fraction(cfg, q)
    for ev in disturbances:
        pts = ev.apply(pts, frac, t)
    return pts


# slack for sample instants against a clock built by repeated addition of dt
_CLOCK_TOL = 1e-9


def _sample(cfg, q, t, state, sensor):
    pts = true_shape(cfg, q, t, state.active_disturbances)
    if sensor.position_noise_std > 0:
        pts = pts + sensor.rng.normal(0.0, sensor.position_noise_std, pts.shape)
    sensor.last_sample = pts
    sensor.next_sample += 1
    return pts


def measure(state: PlantState, cfg: PlantConfig, sensor: SensorModel) -> np.ndarray:
    """Latest sensor sample at ``state.t``, sampling now if a tick is due."""
    t_next = sensor.next_sample / sensor.rate_hz
    if sensor.last_sample is None or t_next <= state.t + _CLOCK_TOL:
        return _sample(cfg, state.q, state.t, state, sensor)
    return sensor.last_sample


def step(state: PlantState, cfg: PlantConfig, qdot, dt: float, sensor: SensorModel):
    """Integrate one control period; return the new state and the latest sensor sample.

    The sensor runs on its own clock: every sample instant inside ``(t, t + dt]``
    is taken with q interpolated along the commanded ramp (zero-order hold on the
    measurement side).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    qdot = np.asarray(qdot, dtype=float)
    if qdot.shape != (cfg.n,) or not np.all(np.isfinite(qdot)):
        raise VelocityLimit(f"bad actuator velocity {qdot}")
    if np.max(np.abs(qdot)) > cfg.qdot_max * (1 + 1e-9):
        raise VelocityLimit(f"|qdot|_inf = {np.max(np.abs(qdot)):.4g} exceeds {cfg.qdot_max}")
    if sensor.last_sample is None:
        measure(state, cfg, sensor)
    t0, q0 = state.t, state.q
    t1 = t0 + dt
    while sensor.next_sample / sensor.rate_hz <= t1 + _CLOCK_TOL:
        ts = sensor.next_sample / sensor.rate_hz
        qs = np.clip(q0 + qdot * (ts - t0), cfg.q_min, cfg.q_max)
        _sample(cfg, qs, ts, state, sensor)
    q1 = q0 + qdot * dt
    for ev in state.active_disturbances:
        if ev.kind is DisturbanceKind.ACTUATION_NOISE and ev.active(t1):
            q1 = q1 + state.rng.normal(0.0, ev.std, q1.shape)
    new = copy.copy(state)
    new.q = np.clip(q1, cfg.q_min, cfg.q_max)
    new.t = t1
    return new, sensor.last_sample


# --------------------------------------------------------------------------- presets


def _racs2() -> PlantConfig:
    g = 2.0  # rad of bend per actuator unit
    return PlantConfig(
        name="racs2",
        sections=[Section(120.0, extensible=False, cable_count=2)],
        n_points=25,
        cable_gain_matrix=np.array([[g, 0.0], [0.0, g], [0.0, 0.0]]),
        q_min=-np.ones(2),
        q_max=np.ones(2),
        qdot_max=1.0,
        markers={"two_points": (0, 12), "bta": (0, 12, 24)},
    )


def _scm6() -> PlantConfig:
    gb, ge = 1.2, 25.0  # rad of bend, mm of extension per unit cable displacement
    angles = np.radians([0.0, 120.0, 240.0])
    block = np.vstack([gb * np.cos(angles), gb * np.sin(angles), -ge / 3 * np.ones(3)])
    G = np.zeros((6, 6))
    G[:3, :3] = block
    G[3:, 3:] = block
    return PlantConfig(
        name="scm6",
        sections=[Section(90.0, extensible=True, cable_count=3), Section(90.0, extensible=True, cable_count=3)],
        n_points=37,
        cable_gain_matrix=G,
        q_min=-np.ones(6),
        q_max=np.ones(6),
        qdot_max=1.0,
        markers={"two_points": (0, 18), "bta": (0, 18, 36), "dep_bta": (0, 9, 18, 27, 36)},
    )


PRESETS = {"racs2": _racs2, "scm6": _scm6}


def preset(name: str) -> PlantConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown plant preset {name!r}; choose from {sorted(PRESETS)}") from None


class Simulator:
    """Black-box view of a plant: command velocities, read features and q.

    Remembers the interval last commanded (start configuration and velocity)
    so the learner can attribute the next measured flow to it.
    """

    def __init__(self, cfg: PlantConfig, q0, kind: FeatureKind | str, sensor: SensorModel,
                 disturbances: Sequence[DisturbanceEvent] = (), markers: Sequence[int] | None = None,
                 seed: int = 0, time_offset: float = 0.0):
        self.cfg = cfg
        self.kind = FeatureKind(kind)
        self.markers = cfg.markers_for(self.kind) if markers is None else tuple(markers)
        self.sensor = sensor
        self.state = PlantState(cfg.check_q(q0).copy(), 0.0, list(disturbances), seed)
        self.time_offset = time_offset
        self.points = measure(self.state, cfg, sensor)
        self.x = self.feature(self.points)
        self.last_interval: tuple[np.ndarray, np.ndarray] | None = None

    def feature(self, points) -> np.ndarray:
        return extract_feature(self.kind, points, self.markers).values

    @property
    def q(self) -> np.ndarray:
        return self.state.q.copy()

    @property
    def t(self) -> float:
        return self.state.t

    def disturbance_mask(self) -> int:
        return sum(1 << i for i, ev in enumerate(self.state.active_disturbances) if ev.active(self.state.t))

    def command(self, qdot, dt: float) -> np.ndarray:
        q_start = self.q
        self.state, self.points = step(self.state, self.cfg, qdot, dt, self.sensor)
        self.x = self.feature(self.points)
        self.last_interval = (q_start, np.asarray(qdot, dtype=float).copy())
        return self.x
