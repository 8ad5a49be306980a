"""Saturated pseudo-inverse velocity law and its safety monitors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite
from .learner import LearnerGains, sat


@dataclass
class ControllerGains:
    k_c: float = 0.32
    k_s: float = 0.04
    eps_sat_e: float = 0.5
    qdot_max: float = 1.0
    sigma_min_ratio: float = 1e-4
    eps_e: float | None = None  # None: derived from the initial error at run time

    def __post_init__(self):
        for name in ("k_c", "k_s", "eps_sat_e", "qdot_max", "sigma_min_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.eps_e is not None and not self.eps_e > 0:
            raise ValueError("eps_e must be strictly positive")


@dataclass
class SafetyReport:
    jacobian_rank: int = 0
    min_singular_value: float = 0.0
    velocity_clamped: bool = False
    nan_detected: bool = False


def pseudo_inverse(J, sigma_min_ratio: float = 1e-4) -> tuple[np.ndarray, SafetyReport]:
    """Truncated-SVD Moore-Penrose inverse.

    Singular values below ``sigma_min_ratio * sigma_max`` are dropped; the
    report carries the effective rank and the smallest retained value.
    """
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise NonFinite("Jacobian contains NaN/Inf")
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(J.T.shape), SafetyReport(0, 0.0)
    keep = s >= sigma_min_ratio * s[0]
    inv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return inv, SafetyReport(int(keep.sum()), float(s[keep][-1]))


def control(J_hat, e, gains: ControllerGains) -> tuple[np.ndarray, SafetyReport]:
    """``qdot = -J+ (k_c e + k_s sat(e))``, clamped to ``+-qdot_max``.

    The reported rank is that of ``J J+``, which equals the retained SVD rank.
    """
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise NonFinite("control error contains NaN/Inf")
    J_pinv, report = pseudo_inverse(J_hat, gains.sigma_min_ratio)
    qdot = -J_pinv @ (gains.k_c * e + gains.k_s * sat(e, gains.eps_sat_e))
    if not np.all(np.isfinite(qdot)):
        report.nan_detected = True
        raise NonFinite("controller produced a non-finite velocity")
    if np.any(np.abs(qdot) > gains.qdot_max):
        report.velocity_clamped = True
        qdot = np.clip(qdot, -gains.qdot_max, gains.qdot_max)
    return qdot, report


@dataclass
class GainCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def passed(self) -> bool:
        return self.margin >= -1e-12

    def as_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, "passed": self.passed}


@dataclass
class GainReport:
    checks: list[GainCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


def check_gain_conditions(gains: ControllerGains, learner_gains: LearnerGains,
                          b_delta1: float | None = None, b_delta2: float | None = None) -> GainReport:
    """Sufficient conditions ``k_s >= b1`` and ``beta_x >= b1 + b2 / alpha_x``."""
    b1 = learner_gains.b_delta1 if b_delta1 is None else b_delta1
    b2 = learner_gains.b_delta2 if b_delta2 is None else b_delta2
    return GainReport([
        GainCheck("k_s >= b_delta1", gains.k_s, b1),
        GainCheck("beta_x >= b_delta1 + b_delta2/alpha_x", learner_gains.beta_x, b1 + b2 / learner_gains.alpha_x),
    ])
