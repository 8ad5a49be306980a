"""Closed-loop shape servoing runs.

Each control period executes, in order: predict the shape flow and update
the estimation error, read q, adapt the weights, evaluate the estimated
Jacobian, compute the velocity command, command the plant, measure and
extract the feature, and form the control error. ``ServoLoop.tracer``
receives the stage names in that order, which the tests pin down.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diagnostics as diag
from .controller import SafetyReport, check_gain_conditions, control
from .errors import NonFinite, OutOfRange, PlantFault, ShapeServoError, VelocityLimit
from .learner import (
    PredictorState,
    RbfBank,
    adapt_weights,
    advance_predictor,
    estimate_jacobian,
    estimate_perturbation_bounds,
    init_bank,
    load_bank,
    save_bank,
    warmup,
)
from .plant import Simulator, plant_jacobian_fd
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

STAGES = ("predict", "estimate_error", "read_q", "adapt", "jacobian", "control", "command", "measure", "error")
EPS_E_FRACTION = 0.01
EPS_E_FLOOR = 0.5
# margin around the visited actuator box for the oracle fit; tighter boxes make
# the wide Gaussian activations nearly collinear
ORACLE_PAD = 0.3


@dataclass
class TelemetryRecord:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    e: np.ndarray
    x_tilde: np.ndarray
    x_tilde_dot: np.ndarray
    norm_e: float
    norm_xtilde: float
    norm_xtildedot: float
    rank: int
    min_sv: float
    clamped: bool
    disturbance: int


@dataclass
class StepInternals:
    """Per-step quantities kept for offline diagnostics but not written to CSV."""

    w_hat: np.ndarray
    r_x: np.ndarray
    flow: np.ndarray
    q_prev: np.ndarray
    qdot_prev: np.ndarray


@dataclass
class RunResult:
    telemetry: list[TelemetryRecord]
    internals: list[StepInternals]
    summary: dict
    bank: RbfBank
    x_d: np.ndarray
    eps_e: float

    @property
    def converged_time(self) -> float | None:
        return self.summary["convergence"]["time_to_threshold"]


def default_eps_e(e0: np.ndarray) -> float:
    return max(EPS_E_FRACTION * float(np.linalg.norm(e0)), EPS_E_FLOOR)


class ServoLoop:
    """Owns one plant simulation plus learner state for a scenario."""

    def __init__(self, cfg: ScenarioConfig, bank: RbfBank | None = None,
                 tracer: Callable[[str], None] | None = None):
        self.cfg = cfg
        self.dt = cfg.dt
        self.plant = cfg.plant_config()
        self.sim = Simulator(self.plant, cfg.q0, cfg.kind, cfg.sensor_model(), (), cfg.feature_markers(),
                             seed=cfg.seed)
        m, n = cfg.kind.dim, self.plant.n
        if bank is None and cfg.warm_start:
            bank = load_bank(cfg.warm_start)
        if bank is None:
            bank = init_bank((m, n, cfg.neurons), (self.plant.q_min, self.plant.q_max), cfg.seed,
                             weight_scale=cfg.weight_scale, w_max=cfg.learner.w_max)
        if bank.dims != (m, n, cfg.neurons):
            raise ShapeServoError(f"bank dims {bank.dims} do not match scenario ({m}, {n}, {cfg.neurons})")
        self.bank = bank
        self.predictor = PredictorState.initial(self.sim.x)
        self.tracer = tracer or (lambda stage: None)
        self.bounds = (cfg.learner.b_delta1, cfg.learner.b_delta2)
        self.bounds_source = "config"

    def run_warmup(self) -> None:
        spec = self.cfg.warmup
        if spec is None or spec.duration <= 0:
            return
        samples: list = []
        self.bank, self.predictor = warmup(self.sim, self.bank, self.predictor, self.cfg.learner, spec.duration,
                                           spec.amplitude, self.cfg.seed, self.dt, spec.frequency, samples)
        if self.cfg.learner.b_delta1 == 0 and self.cfg.learner.b_delta2 == 0:
            self.bounds = estimate_perturbation_bounds(self.bank, samples, self.dt)
            self.bounds_source = "warmup"

    def servo(self, x_d, max_duration: float, stop_on_convergence: bool = True, disturbances=(),
              eps_e: float | None = None, adapt: bool = True) -> RunResult:
        """Run the control loop toward ``x_d``; time in the returned telemetry starts at 0."""
        cfg, dt, sim = self.cfg, self.dt, self.sim
        lg, cg = cfg.learner, cfg.controller
        x_d = np.asarray(x_d, dtype=float)
        t_start = sim.t
        sim.state.active_disturbances = [dataclasses.replace(ev, onset=ev.onset + t_start) for ev in disturbances]
        x = sim.x
        e = x - x_d
        if eps_e is None:
            eps_e = cg.eps_e if cg.eps_e is not None else default_eps_e(e)
        telemetry: list[TelemetryRecord] = []
        internals: list[StepInternals] = []
        n_steps = int(round(max_duration / dt))
        band_start = None
        converged_at = None
        aborted = None
        n = self.plant.n
        try:
            for k in range(n_steps + 1):
                t = k * dt
                # predictor update for the interval that just elapsed
                self.tracer("predict")
                if sim.last_interval is not None:
                    q_prev, qdot_prev = sim.last_interval
                    flow = (x - self.predictor.last_x) / dt
                    self.predictor, x_tilde_dot, r_x = advance_predictor(
                        self.predictor, self.bank, q_prev, qdot_prev, x, dt, lg)
                else:
                    q_prev, qdot_prev = sim.q, np.zeros(n)
                    flow = np.zeros_like(x)
                    x_tilde_dot = np.zeros_like(x)
                    r_x = lg.alpha_x * self.predictor.x_tilde
                self.tracer("estimate_error")
                x_tilde = self.predictor.x_tilde
                self.tracer("read_q")
                q = sim.q
                self.tracer("adapt")
                if adapt:
                    self.bank = adapt_weights(self.bank, q_prev, qdot_prev, e, x_tilde, r_x, lg, dt)
                self.tracer("jacobian")
                J_hat = estimate_jacobian(self.bank, q)
                self.tracer("control")
                try:
                    qdot, report = control(J_hat, e, cg)
                except NonFinite:
                    report = SafetyReport(nan_detected=True)
                    raise
                norm_e = float(np.linalg.norm(e))
                if norm_e <= eps_e:
                    band_start = t if band_start is None else band_start
                else:
                    band_start = None
                done = band_start is not None and t - band_start >= cfg.hold - 1e-9
                if done and converged_at is None:
                    converged_at = band_start
                telemetry.append(TelemetryRecord(
                    t=t, q=q, qdot=qdot, x=x.copy(), x_hat=self.predictor.x_hat.copy(), e=e.copy(),
                    x_tilde=x_tilde.copy(), x_tilde_dot=np.asarray(x_tilde_dot).copy(), norm_e=norm_e,
                    norm_xtilde=float(np.linalg.norm(x_tilde)), norm_xtildedot=float(np.linalg.norm(x_tilde_dot)),
                    rank=report.jacobian_rank, min_sv=report.min_singular_value,
                    clamped=report.velocity_clamped, disturbance=sim.disturbance_mask()))
                internals.append(StepInternals(self.bank.vector(), np.asarray(r_x).copy(), flow,
                                               np.asarray(q_prev).copy(), np.asarray(qdot_prev).copy()))
                if (done and stop_on_convergence) or k == n_steps:
                    break
                self.tracer("command")
                try:
                    sim.command(qdot, dt)
                except (VelocityLimit, OutOfRange) as exc:
                    raise PlantFault(str(exc)) from exc
                self.tracer("measure")
                x = sim.x
                if not np.all(np.isfinite(x)):
                    raise NonFinite("measured feature is not finite")
                self.tracer("error")
                e = x - x_d
        except (PlantFault, NonFinite) as exc:
            aborted = f"{type(exc).__name__}: {exc}"
            log.error("run aborted: %s", aborted)
        finally:
            sim.state.active_disturbances = []
        metrics = diag.convergence_metrics(telemetry, eps_e, cfg.hold)
        summary = {
            "convergence": metrics.as_dict(),
            "safety": safety_counts(telemetry),
            "aborted": aborted,
            "steps": len(telemetry),
            "t_start": t_start,
        }
        return RunResult(telemetry, internals, summary, self.bank, x_d, eps_e)


def safety_counts(telemetry) -> dict:
    clamped = [r.clamped for r in telemetry]
    longest = run = 0
    for c in clamped:
        run = run + 1 if c else 0
        longest = max(longest, run)
    m = len(telemetry[0].e) if telemetry else 0
    n = len(telemetry[0].q) if telemetry else 0
    return {
        "clamped_steps": int(sum(clamped)),
        "max_consecutive_clamped": int(longest),
        "rank_deficient_steps": int(sum(r.rank < min(m, n) for r in telemetry)),
        "nan_steps": int(sum(not (np.all(np.isfinite(r.e)) and np.all(np.isfinite(r.qdot))) for r in telemetry)),
        "max_abs_qdot": float(max((np.max(np.abs(r.qdot)) for r in telemetry), default=0.0)),
    }


def _gain_report(cfg: ScenarioConfig, bounds) -> dict:
    rep = check_gain_conditions(cfg.controller, cfg.learner, *bounds)
    if not rep.passed:
        log.warning("gain conditions not satisfied (sufficient, not necessary): %s", rep.as_dict())
    return rep.as_dict()


def run_scenario(cfg: ScenarioConfig, bank: RbfBank | None = None, tracer=None) -> RunResult:
    """Warm up (if configured) then servo to the scenario target."""
    loop = ServoLoop(cfg, bank, tracer)
    loop.run_warmup()
    x_d = cfg.desired_feature(current=loop.sim.x)
    result = loop.servo(x_d, cfg.max_duration, cfg.stop_on_convergence, cfg.disturbances)
    result.summary.update({
        "name": cfg.name,
        "seed": cfg.seed,
        "perturbation_bounds": {"b_delta1": loop.bounds[0], "b_delta2": loop.bounds[1],
                                "source": loop.bounds_source},
        "gain_conditions": _gain_report(cfg, loop.bounds),
        "config": cfg.to_dict(),
    })
    result.loop = loop
    return result


@dataclass
class RepeatResult:
    runs: list[RunResult]
    returns: list[RunResult]
    summary: dict = field(default_factory=dict)


def run_repeat(cfg: ScenarioConfig, repeats: int, workdir: Path | str | None = None) -> RepeatResult:
    """Repeat the task, carrying the learned weights from one completion to the next.

    After each completion the shape is driven back to the starting shape with
    adaptation still running, and the bank is written to JSON and read back
    before the next attempt. Warm-up happens once, before the first attempt.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    import tempfile

    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory()
        workdir = tmp.name
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    loop = ServoLoop(cfg)
    loop.run_warmup()
    x_init = loop.sim.x.copy()
    x_d = cfg.desired_feature(current=x_init)
    runs, returns = [], []
    try:
        for i in range(repeats):
            res = loop.servo(x_d, cfg.max_duration, True, cfg.disturbances)
            res.summary.update({"name": f"{cfg.name}-run{i + 1}", "seed": cfg.seed, "repeat": i + 1})
            runs.append(res)
            if res.summary["aborted"]:
                break
            back = loop.servo(x_init, cfg.max_duration, True, eps_e=res.eps_e)
            returns.append(back)
            path = workdir / f"bank_run{i + 1}.json"
            save_bank(loop.bank, path, extra={"scenario": cfg.name, "after_run": i + 1})
            loop.bank = load_bank(path)
    finally:
        if tmp is not None:
            tmp.cleanup()
    times = [r.converged_time for r in runs]
    summary = {
        "name": cfg.name,
        "seed": cfg.seed,
        "repeats": repeats,
        "convergence_times": times,
        "warm_start_speedup": diag.warm_start_speedup(times),
        "return_times": [r.converged_time for r in returns],
        "gain_conditions": _gain_report(cfg, loop.bounds),
        "config": cfg.to_dict(),
    }
    return RepeatResult(runs, returns, summary)


# --------------------------------------------------------------------------- oracle & verification


def visited_grid(result: RunResult, cfg: ScenarioConfig, per_dim: int | None = None) -> np.ndarray:
    qs = np.array([r.q for r in result.telemetry])
    plant = cfg.plant_config()
    if per_dim is None:
        per_dim = 10 if plant.n <= 2 else 3
    return diag.grid_around(qs, plant.q_min, plant.q_max, per_dim=per_dim, pad=ORACLE_PAD)


def fit_oracle_for_run(cfg: ScenarioConfig, result: RunResult, per_dim: int | None = None) -> diag.OracleWeights:
    grid = visited_grid(result, cfg, per_dim)
    return diag.fit_oracle_weights(cfg.plant_config(), cfg.kind, result.bank, grid, cfg.feature_markers())


def lyapunov_trace(cfg: ScenarioConfig, result: RunResult, oracle: diag.OracleWeights) -> diag.LyapunovTrace:
    integ = diag.LyapunovIntegrator(oracle, cfg.learner)
    basis = result.bank
    for rec, inn in zip(result.telemetry, result.internals):
        delta = diag.delta_proxy(inn.flow, inn.q_prev, inn.qdot_prev, oracle, basis)
        integ.add(rec.t, rec.e, rec.x_tilde, inn.r_x, inn.w_hat, delta, cfg.dt, disturbed=bool(rec.disturbance))
    return integ.trace


@dataclass
class VerifyReport:
    result: RunResult
    oracle: diag.OracleWeights
    trace: diag.LyapunovTrace
    monotonicity: diag.MonotonicityReport
    gains: dict
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        V0 = self.trace.V[0] if len(self.trace) else 0.0
        return {
            "passed": self.passed,
            "checks": self.checks,
            "monotonicity": self.monotonicity.as_dict(),
            "V0": V0,
            "oracle": {"fit_residual": self.oracle.fit_residual, "condition": self.oracle.condition},
            "gain_conditions": self.gains,
            "convergence": self.result.summary["convergence"],
        }


def verify(cfg: ScenarioConfig, min_compliance: float = 0.99, rel_tol: float = 1e-3,
           r_tol: float = 1e-6) -> VerifyReport:
    """Run, fit ideal weights over the visited region, and audit the Lyapunov candidate."""
    result = run_scenario(cfg)
    oracle = fit_oracle_for_run(cfg, result)
    trace = lyapunov_trace(cfg, result, oracle)
    mono = diag.monotonicity_check(trace, rel_tol=rel_tol)
    deltas = np.asarray(trace.delta)
    b1 = float(np.linalg.norm(deltas, axis=1).max())
    b2 = float(np.linalg.norm(np.diff(deltas, axis=0), axis=1).max() / cfg.dt) if len(deltas) > 1 else 0.0
    gains = check_gain_conditions(cfg.controller, cfg.learner, b1, b2).as_dict()
    gains["bounds"] = {"b_delta1": b1, "b_delta2": b2, "source": "oracle perturbation proxy on this run"}
    V0 = trace.V[0]
    checks = {
        "converged": result.converged_time is not None,
        "not_aborted": result.summary["aborted"] is None,
        "monotonicity": mono.compliance >= min_compliance,
        "R_nonnegative": mono.min_R >= -r_tol * abs(V0),
        "gain_conditions": gains["passed"],
    }
    return VerifyReport(result, oracle, trace, mono, gains, checks)


def jacobian_errors(cfg: ScenarioConfig, bank: RbfBank, qs) -> np.ndarray:
    """Frobenius distance between the estimated and finite-difference Jacobians at each ``q``."""
    plant, markers = cfg.plant_config(), cfg.feature_markers()
    return np.array([np.linalg.norm(estimate_jacobian(bank, q) - plant_jacobian_fd(plant, q, cfg.kind, markers))
                     for q in qs])
