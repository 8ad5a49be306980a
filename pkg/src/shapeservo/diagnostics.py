"""Simulation-only stability diagnostics.

The ideal network weights do not exist for a physical robot. Here they are
made to exist for the simulated plant by a least-squares fit of each
network's activations to the finite-difference Jacobian rows, which then
lets the Lyapunov candidate and the lumped perturbation be evaluated along
a recorded run.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DimensionMismatch, EmptyTrace, IllConditionedFit
from .learner import LearnerGains, RbfBank, build_parameterization, rbf_activation, sat, vectorize
from .plant import PlantConfig, plant_jacobian_fd

MAX_FIT_CONDITION = 1e12


@dataclass
class OracleWeights:
    w_bar: np.ndarray  # flat, same grouping as RbfBank.vector()
    fit_residual: float
    dims: tuple[int, int, int]
    condition: float = 1.0

    def bank(self, basis: RbfBank) -> RbfBank:
        return basis.with_vector(self.w_bar)


def grid_around(points: np.ndarray, q_min, q_max, per_dim: int = 10, pad: float = 0.05) -> np.ndarray:
    """Tensor grid over the (padded, clipped) bounding box of ``points``."""
    pts = np.atleast_2d(points)
    lo = np.maximum(pts.min(axis=0) - pad, q_min + 1e-4)
    hi = np.minimum(pts.max(axis=0) + pad, q_max - 1e-4)
    axes = [np.linspace(a, b, per_dim) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def fit_oracle_weights(cfg: PlantConfig, kind, bank_basis: RbfBank, q_grid, markers=None,
                       jacobians: Sequence[np.ndarray] | None = None) -> OracleWeights:
    """Least-squares weights reproducing the plant Jacobian on ``q_grid``.

    Network ``i`` solves ``min_W sum_q ||W theta_i(q) - J_i(q)||^2`` on its own
    centers/widths, with every weight kept inside the bank's ``[-w_max, w_max]``
    box (the set the adaptation projects onto). An overdetermined fit whose
    activation Gram matrix has condition number above 1e12 raises
    :class:`IllConditionedFit`.
    """
    q_grid = np.atleast_2d(np.asarray(q_grid, dtype=float))
    m, n, k = bank_basis.dims
    if q_grid.shape[1] != n:
        raise DimensionMismatch("grid dimension differs from actuator count")
    if jacobians is None:
        jacobians = [plant_jacobian_fd(cfg, q, kind, markers) for q in q_grid]
    J = np.asarray(jacobians)  # (G, m, n)
    if J.shape != (len(q_grid), m, n):
        raise DimensionMismatch(f"Jacobians have shape {J.shape}, expected ({len(q_grid)}, {m}, {n})")
    theta = np.array([rbf_activation(bank_basis, q) for q in q_grid])  # (G, m, k)
    weights = np.empty((m, n, k))
    worst_cond = 1.0
    residual = 0.0
    for i in range(m):
        A = theta[:, i, :]
        if len(q_grid) >= k:
            s = np.linalg.svd(A, compute_uv=False)
            cond = np.inf if s[-1] == 0 else float((s[0] / s[-1]) ** 2)
            if cond > MAX_FIT_CONDITION:
                raise IllConditionedFit(f"network {i}: Gram condition number {cond:.3g} exceeds {MAX_FIT_CONDITION:g}")
            worst_cond = max(worst_cond, cond)
        sol = np.column_stack([
            lsq_linear(A, J[:, i, a], bounds=(-bank_basis.w_max, bank_basis.w_max)).x for a in range(n)])
        weights[i] = sol.T
        err = A @ sol - J[:, i, :]
        residual = max(residual, float(np.max(np.linalg.norm(err, axis=1))))
    return OracleWeights(vectorize(weights), residual, (m, n, k), worst_cond)


def delta_proxy(x_meas_flow, q, qdot, oracle: OracleWeights, bank_basis: RbfBank) -> np.ndarray:
    """Lumped perturbation estimate: measured flow minus the ideal-weight prediction."""
    flow = np.asarray(x_meas_flow, dtype=float)
    if flow.shape != (oracle.dims[0],) or bank_basis.dims != oracle.dims:
        raise DimensionMismatch("flow/oracle/basis dimensions disagree")
    return flow - build_parameterization(q, qdot, oracle.dims, bank_basis) @ oracle.w_bar


def lyapunov_value(e, x_tilde, w_hat, oracle: OracleWeights | np.ndarray, gains: LearnerGains, R_t: float):
    """Composite Lyapunov candidate and its four terms.

    ``V = k_e/2 |e|^2 + k_x/2 |x~|^2 + 1/2 W~' Gamma W~ + k_r R`` with
    ``W~ = W_bar - W_hat`` and ``Gamma = 1 / gamma_inv``.
    """
    w_bar = oracle.w_bar if isinstance(oracle, OracleWeights) else np.asarray(oracle, dtype=float)
    e = np.asarray(e, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    w_tilde = w_bar - np.asarray(w_hat, dtype=float)
    terms = {
        "control": 0.5 * gains.k_e * float(e @ e),
        "estimation": 0.5 * gains.k_x * float(x_tilde @ x_tilde),
        "weights": 0.5 / gains.gamma_inv * float(w_tilde @ w_tilde),
        "auxiliary": gains.k_r * float(R_t),
    }
    return sum(terms.values()), terms


@dataclass
class LyapunovTrace:
    times: list = field(default_factory=list)
    V: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    R: list = field(default_factory=list)
    H: list = field(default_factory=list)
    delta_norm: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    disturbed: list = field(default_factory=list)

    def __len__(self):
        return len(self.V)

    def rows(self):
        for i in range(len(self)):
            yield {"t": self.times[i], "V": self.V[i], **self.terms[i], "R": self.R[i], "H": self.H[i],
                   "delta_norm": self.delta_norm[i], "disturbed": self.disturbed[i]}


class LyapunovIntegrator:
    """Accumulates the candidate along a run.

    ``H(0) = 0``; ``R(0) = beta_x sum|x~_i(0)| - x~(0)' delta(0)`` with
    ``delta(0)`` the first perturbation sample; afterwards ``H`` integrates
    ``r_x' (delta - beta_x sat(x~))`` by the rectangle rule and ``R = R(0) - H``.
    """

    def __init__(self, oracle: OracleWeights, gains: LearnerGains):
        self.oracle = oracle
        self.gains = gains
        self.trace = LyapunovTrace()
        self.R0: float | None = None
        self.H = 0.0

    def add(self, t, e, x_tilde, r_x, w_hat, delta, dt: float, disturbed: bool = False):
        g = self.gains
        x_tilde = np.asarray(x_tilde, dtype=float)
        delta = np.asarray(delta, dtype=float)
        if self.R0 is None:
            self.R0 = g.beta_x * float(np.sum(np.abs(x_tilde))) - float(x_tilde @ delta)
        else:
            self.H += dt * float(np.asarray(r_x) @ (delta - g.beta_x * sat(x_tilde, g.eps_sat)))
        R = self.R0 - self.H
        V, terms = lyapunov_value(e, x_tilde, w_hat, self.oracle, g, R)
        tr = self.trace
        if tr.times and t <= tr.times[-1]:
            raise ValueError("Lyapunov trace times must be strictly increasing")
        tr.times.append(float(t))
        tr.V.append(V)
        tr.terms.append(terms)
        tr.R.append(R)
        tr.H.append(self.H)
        tr.delta_norm.append(float(np.linalg.norm(delta)))
        tr.delta.append(delta.copy())
        tr.disturbed.append(bool(disturbed))


@dataclass
class MonotonicityReport:
    compliance: float
    worst_violation: float
    tolerance: float
    violations: list
    min_R: float

    def as_dict(self) -> dict:
        return {"compliance": self.compliance, "worst_violation": self.worst_violation,
                "tolerance": self.tolerance, "n_violations": len(self.violations),
                "violation_times": self.violations[:50], "min_R": self.min_R}


def monotonicity_check(trace: LyapunovTrace, tol: float | None = None, rel_tol: float = 1e-3) -> MonotonicityReport:
    """Fraction of steps with ``V(t + dt) <= V(t) + tol`` (default ``tol = rel_tol * V(0)``)."""
    if len(trace) == 0:
        raise EmptyTrace("no Lyapunov samples")
    V = np.asarray(trace.V)
    tol = rel_tol * abs(V[0]) if tol is None else tol
    if len(V) == 1:
        return MonotonicityReport(1.0, 0.0, tol, [], float(min(trace.R)))
    inc = np.diff(V)
    bad = np.nonzero(inc > tol)[0]
    worst = float(max(inc.max(), 0.0))
    return MonotonicityReport(1.0 - len(bad) / len(inc), worst, tol,
                              [float(trace.times[i + 1]) for i in bad], float(min(trace.R)))


@dataclass
class ConvergenceMetrics:
    time_to_threshold: float | None
    never_converged: bool
    final_norms: dict
    eps_e: float

    def as_dict(self) -> dict:
        return {"time_to_threshold": self.time_to_threshold, "never_converged": self.never_converged,
                "final_norms": self.final_norms, "eps_e": self.eps_e}


def time_to_threshold(times, norm_e, eps_e: float, hold: float = 1.0) -> float | None:
    """First time from which ``norm_e <= eps_e`` holds for ``hold`` seconds (or to the end)."""
    times = np.asarray(times, dtype=float)
    below = np.asarray(norm_e, dtype=float) <= eps_e
    start = None
    for i, ok in enumerate(below):
        if not ok:
            start = None
            continue
        if start is None:
            start = i
        if times[i] - times[start] >= hold - 1e-9:
            return float(times[start] - times[0])
    return None


def convergence_metrics(telemetry, eps_e: float, hold: float = 1.0) -> ConvergenceMetrics:
    """``telemetry`` is a sequence of records carrying ``t``, ``norm_e``, ``norm_xtilde``, ``norm_xtildedot``."""
    if not telemetry:
        return ConvergenceMetrics(None, True, {}, eps_e)
    t = [r.t for r in telemetry]
    ne = [r.norm_e for r in telemetry]
    ttt = time_to_threshold(t, ne, eps_e, hold)
    last = telemetry[-1]
    finals = {"norm_e": last.norm_e, "norm_xtilde": last.norm_xtilde, "norm_xtildedot": last.norm_xtildedot}
    return ConvergenceMetrics(ttt, ttt is None, finals, eps_e)


def warm_start_speedup(times: Sequence[float | None]) -> float | None:
    """Mean convergence time of runs 2..N over run 1's; ``None`` if any run never converged."""
    if len(times) < 2 or any(t is None for t in times) or not times[0]:
        return None
    return float(np.mean(times[1:]) / times[0])
