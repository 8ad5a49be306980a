"""Scenario configuration: JSON in, validated dataclasses out.

Unknown keys are rejected at every level so a typo never silently falls
back to a default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .controller import ControllerGains
from .errors import ConfigError
from .features import FeatureKind, extract_feature
from .learner import LearnerGains, WarmupSpec
from .plant import DisturbanceEvent, PlantConfig, SensorModel, forward_shape, preset

# gains, neuron counts and a default starting pose per preset
PRESET_DEFAULTS = {
    "racs2": {
        "learner": dict(alpha_x=0.3, beta_x=0.04, k_e=0.01, k_x=0.01, k_r=0.2, gamma_inv=0.1),
        "controller": dict(k_c=0.32, k_s=0.04),
        "neurons": 9,
        "q0": [0.3, 0.2],
    },
    "scm6": {
        "learner": dict(alpha_x=0.6, beta_x=0.12, k_e=0.01, k_x=0.01, k_r=0.2, gamma_inv=1.0),
        "controller": dict(k_c=0.02, k_s=0.01),
        "neurons": 13,
        "q0": [0.3, 0.0, -0.1, 0.2, -0.1, 0.0],
    },
}


def _build(cls, data: dict | None, where: str, **base):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {**base, **data}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass
class Target:
    q: list | None = None
    x: list | None = None
    # pose the unconstrained arc model beyond the actuator limits (unreachable targets)
    extrapolate: bool = False

    def __post_init__(self):
        if (self.q is None) == (self.x is None):
            raise ValueError("target needs exactly one of 'q' or 'x'")


@dataclass
class ScenarioConfig:
    seed: int
    plant: str = "racs2"
    feature: str = "bta"
    markers: list | None = None
    q0: list | None = None
    target: Target | None = None
    learner: LearnerGains = field(default_factory=LearnerGains)
    controller: ControllerGains = field(default_factory=ControllerGains)
    neurons: int = 9
    weight_scale: float = 0.1
    disturbances: list = field(default_factory=list)
    sensor: dict = field(default_factory=lambda: {"position_noise_std": 0.1, "rate_hz": 25.0})
    rate_hz: float = 20.0
    max_duration: float = 60.0
    hold: float = 1.0
    stop_on_convergence: bool = True
    warm_start: str | None = None
    warmup: WarmupSpec | None = None
    name: str = "scenario"

    # ------------------------------------------------------------------ construction
    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ScenarioConfig":
        doc = dict(doc)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "seed" not in doc:
            raise ConfigError("scenario must set 'seed'")
        plant_name = doc.get("plant", "racs2")
        if plant_name not in PRESET_DEFAULTS:
            raise ConfigError(f"unknown plant preset {plant_name!r}")
        defaults = PRESET_DEFAULTS[plant_name]
        doc["learner"] = _build(LearnerGains, doc.get("learner"), "learner", **defaults["learner"])
        doc["controller"] = _build(ControllerGains, doc.get("controller"), "controller", **defaults["controller"])
        doc.setdefault("neurons", defaults["neurons"])
        doc.setdefault("q0", list(defaults["q0"]))
        if doc.get("target") is not None:
            doc["target"] = _build(Target, doc["target"], "target")
        if doc.get("warmup") is not None:
            doc["warmup"] = _build(WarmupSpec, doc["warmup"], "warmup")
        sensor = {"position_noise_std": 0.1, "rate_hz": 25.0, **(doc.get("sensor") or {})}
        _build(SensorModel, sensor, "sensor")
        doc["sensor"] = sensor
        events = []
        for i, ev in enumerate(doc.get("disturbances") or []):
            ev = dict(ev)
            if "duration" in ev and ev["duration"] is None:
                del ev["duration"]
            for key in ("offset", "gravity", "point", "normal"):
                if key in ev:
                    ev[key] = tuple(ev[key])
            events.append(_build(DisturbanceEvent, ev, f"disturbances[{i}]"))
        doc["disturbances"] = events
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        doc = json.loads(Path(path).read_text())
        doc.setdefault("name", Path(path).stem)
        return cls.from_dict(doc)

    def validate(self) -> None:
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.rate_hz <= 0 or self.max_duration <= 0 or self.hold < 0:
            raise ConfigError("rate_hz and max_duration must be positive")
        FeatureKind(self.feature)
        cfg = self.plant_config()
        cfg.check_q(self.q0)
        if self.target is not None and self.target.x is not None:
            if len(self.target.x) != FeatureKind(self.feature).dim:
                raise ConfigError("target x dimension does not match the feature kind")
        if self.neurons < 1:
            raise ConfigError("neurons must be >= 1")

    # ------------------------------------------------------------------ derived objects
    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz

    @property
    def kind(self) -> FeatureKind:
        return FeatureKind(self.feature)

    def plant_config(self) -> PlantConfig:
        cfg = preset(self.plant)
        cfg.qdot_max = max(cfg.qdot_max, self.controller.qdot_max)
        return cfg

    def feature_markers(self) -> tuple[int, ...]:
        return tuple(self.markers) if self.markers is not None else self.plant_config().markers_for(self.kind)

    def sensor_model(self) -> SensorModel:
        return SensorModel(seed=self.seed, **self.sensor)

    def desired_feature(self, current: np.ndarray | None = None) -> np.ndarray:
        """Target feature: explicit, or the plant posed at ``target.q``; current shape if unset."""
        if self.target is None:
            if current is None:
                raise ConfigError("scenario has no target")
            return np.asarray(current, dtype=float).copy()
        if self.target.x is not None:
            return np.asarray(self.target.x, dtype=float)
        cfg = self.plant_config()
        q = np.asarray(self.target.q, dtype=float)
        if self.target.extrapolate:
            cfg.q_min = np.minimum(cfg.q_min, q) - 1.0
            cfg.q_max = np.maximum(cfg.q_max, q) + 1.0
        pts = forward_shape(cfg, q)
        return extract_feature(self.kind, pts, self.feature_markers()).values

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["disturbances"] = [
            {k: (v.value if hasattr(v, "value") else (list(v) if isinstance(v, tuple) else v))
             for k, v in dataclasses.asdict(ev).items()}
            for ev in self.disturbances
        ]
        for ev in doc["disturbances"]:
            if ev.get("duration") == float("inf"):
                ev["duration"] = None
        return doc
