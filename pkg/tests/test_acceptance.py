"""End-to-end acceptance checks, one verdict line per criterion."""
import time
from pathlib import Path

import numpy as np

from shapeservo import harness
from shapeservo.controller import pseudo_inverse
from shapeservo.features import bending_angle, extract_feature, feature_jacobian, twist_angle
from shapeservo.learner import (
    LearnerGains,
    RbfBank,
    adapt_weights,
    build_parameterization,
    estimate_jacobian,
    init_bank,
)
from shapeservo.report import emit_outputs
from shapeservo.scenario import ScenarioConfig

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def load(name: str, **changes) -> ScenarioConfig:
    cfg = ScenarioConfig.load(SCENARIOS / f"{name}.json")
    return cfg.replace(**changes) if changes else cfg


def series(res, key: str) -> np.ndarray:
    return np.array([getattr(r, key) for r in res.telemetry])


def settle_time(t: np.ndarray, y: np.ndarray, level: float) -> float | None:
    """First time after which ``y`` stays at or below ``level`` for the rest of the run."""
    above = np.nonzero(y > level)[0]
    if not len(above):
        return float(t[0])
    if above[-1] == len(y) - 1:
        return None
    return float(t[above[-1] + 1])


def timed_run(cfg):
    start = time.perf_counter()
    res = harness.run_scenario(cfg)
    return res, time.perf_counter() - start


def convergence_checks(res, wall: float, wall_limit: float, horizon: float = 60.0) -> dict:
    t = series(res, "t")
    out = {}
    for key in ("norm_e", "norm_xtilde"):
        y = series(res, key)
        ts = settle_time(t, y, 0.01 * y[0])
        detail = f"below 1% of {y[0]:.4g} from t={ts:.2f} s" if ts is not None else "never settles"
        out[key] = (ts is not None and ts <= horizon, detail)
    xtd = series(res, "norm_xtildedot")
    tail = xtd[t >= t[-1] - 1.0].mean()
    out["xtildedot"] = (tail < 0.05 * xtd.max(), f"last-1s mean {tail:.3g} vs peak {xtd.max():.3g}")
    out["runtime"] = (wall < wall_limit, f"{wall:.2f} s wall")
    return out


def test_c1_free_space_convergence(verdict):
    res, wall = timed_run(load("racs2_free_space"))
    checks = convergence_checks(res, wall, 5.0)
    ok = all(verdict(f"C1 free-space {name}", passed, detail) for name, (passed, detail) in checks.items())
    assert ok and res.summary["aborted"] is None


def test_c2_dep_bta_convergence(verdict):
    cfg = load("scm6_dep_bta")
    plant = cfg.plant_config()
    ext = lambda q: (plant.cable_gain_matrix @ np.asarray(q)).reshape(-1, 3)[:, 2]
    changes_length = bool(np.any(np.abs(ext(cfg.target.q) - ext(cfg.q0)) > 1e-6))
    res, wall = timed_run(cfg)
    checks = convergence_checks(res, wall, 10.0)
    checks["length_change"] = (changes_length, f"section extension {ext(cfg.q0)} -> {ext(cfg.target.q)}")
    ok = all(verdict(f"C2 dep-bta {name}", passed, detail) for name, (passed, detail) in checks.items())
    assert ok and res.summary["aborted"] is None


def reentry_times(res, cfg, band: float) -> list[float | None]:
    t, ne = series(res, "t"), series(res, "norm_e")
    hold = int(round(cfg.hold / cfg.dt))
    onsets = [ev.onset for ev in cfg.disturbances] + [np.inf]
    out = []
    for onset, nxt in zip(onsets[:-1], onsets[1:]):
        window = np.nonzero((t >= onset) & (t < nxt))[0]
        left = window[ne[window] > band]
        if not len(left):
            out.append(0.0)  # never left the band
            continue
        found = None
        for i in window[window > left[0]]:
            seg = ne[i:i + hold]
            if np.all(seg <= band) and (len(seg) == hold or i + len(seg) == len(ne)):
                found = round(float(t[i] - onset), 9)
                break
        out.append(found)
    return out


def test_c3_disturbance_recovery(verdict):
    cfg = load("racs2_impulses")
    res = harness.run_scenario(cfg)
    ne = series(res, "norm_e")
    band = 0.01 * ne[0]
    first = res.converged_time
    pre = verdict("C3 converged before first impulse", first is not None and first < cfg.disturbances[0].onset,
                  f"t={first}")
    times = reentry_times(res, cfg, band)
    re = [verdict(f"C3 re-entry after impulse at {ev.onset:g} s", tt is not None and tt <= 20.0,
                  "never" if tt is None else f"{tt:.2f} s")
          for ev, tt in zip(cfg.disturbances, times)]
    safety = res.summary["safety"]
    nan = verdict("C3 no NaN", safety["nan_steps"] == 0 and res.summary["aborted"] is None)
    clamp = verdict("C3 clamp run <= 5 steps", safety["max_consecutive_clamped"] <= 5,
                    f"max consecutive {safety['max_consecutive_clamped']}")
    assert pre and all(re) and nan and clamp


def test_c4_warm_start_speedup(verdict, tmp_path):
    rep = harness.run_repeat(load("racs2_warm_start"), 4, tmp_path)
    times = rep.summary["convergence_times"]
    ratio = rep.summary["warm_start_speedup"]
    ok = verdict("C4 warm-start mean(runs 2-4)/run 1 <= 0.85", ratio is not None and ratio <= 0.85,
                 f"times {[None if x is None else round(x, 2) for x in times]}, ratio {ratio:.3f}"
                 if ratio is not None else f"times {times}")
    assert ok


def test_c5_unreachable_target(verdict):
    cfg = load("racs2_unreachable")
    res = harness.run_scenario(cfg)
    t, ne = series(res, "t"), series(res, "norm_e")
    qdot = series(res, "qdot")
    tail = ne[t >= t[-1] - 10.0]
    cv = tail.std() / tail.mean()
    full = verdict("C5 ran full duration", res.summary["aborted"] is None and t[-1] >= cfg.max_duration - 1e-9,
                   f"t_end={t[-1]:g}")
    bounded = verdict("C5 q̇ bounded", np.abs(qdot).max() <= cfg.controller.qdot_max,
                      f"max |q̇| {np.abs(qdot).max():.4g}")
    plateau = verdict("C5 nonzero plateau, CV < 10%", cv < 0.10 and tail.mean() > 0.01 * ne[0],
                      f"mean {tail.mean():.4g}, CV {cv:.4%}")
    nan = verdict("C5 no NaN", res.summary["safety"]["nan_steps"] == 0)
    assert full and bounded and plateau and nan


def test_c6_lyapunov_monotonicity(verdict):
    rep = harness.verify(load("racs2_lyapunov"), min_compliance=0.99, rel_tol=1e-3, r_tol=1e-6)
    mono = rep.monotonicity
    b = rep.gains["bounds"]
    details = {
        "converged": f"t={rep.result.converged_time}",
        "not_aborted": "",
        "monotonicity": f"compliance {mono.compliance:.4f}",
        "R_nonnegative": f"min R {mono.min_R:.4g}, V0 {rep.trace.V[0]:.4g}",
        "gain_conditions": f"b1 {b['b_delta1']:.4g}, b2 {b['b_delta2']:.4g}",
    }
    ok = all(verdict(f"C6 {name}", passed, details[name]) for name, passed in rep.checks.items())
    assert ok


def test_c7_linear_parameterization(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        m, n, k = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 14)
        bank = RbfBank(rng.normal(0, 1, (m, n, k)), rng.uniform(-1, 1, (m, k, n)), rng.uniform(0.3, 2.0, (m, k)))
        q, qdot = rng.uniform(-1, 1, n), rng.normal(0, 1, n)
        direct = estimate_jacobian(bank, q) @ qdot
        lifted = build_parameterization(q, qdot, bank.dims, bank) @ bank.vector()
        scale = max(np.abs(direct).max(), np.finfo(float).tiny)
        worst = max(worst, np.abs(direct - lifted).max() / scale)
    assert verdict("C7 parameterization equivalence < 1e-12 rel", worst < 1e-12, f"worst {worst:.3g}")


def test_c8_oracle_jacobian_agreement(verdict):
    cfg = load("racs2_jacobian")
    res = harness.run_scenario(cfg)
    plant = cfg.plant_config()
    fresh = init_bank(res.bank.dims, (plant.q_min, plant.q_max), cfg.seed, weight_scale=cfg.weight_scale,
                      w_max=cfg.learner.w_max)
    qs = series(res, "q")
    before = harness.jacobian_errors(cfg, fresh, qs).mean()
    after = harness.jacobian_errors(cfg, res.bank, qs).mean()
    conv = verdict("C8 run converged", res.converged_time is not None, f"t={res.converged_time}")
    red = verdict("C8 Jacobian error reduced >= 50%", after <= 0.5 * before,
                  f"{before:.4g} -> {after:.4g} ({after / before:.3f})")
    assert conv and red


def _fd(kind, r, markers, h=1e-5):
    flat = r.reshape(-1)
    cols = []
    for c in range(flat.size):
        d = np.zeros_like(flat)
        d[c] = h
        cols.append((extract_feature(kind, (flat + d).reshape(-1, 3), markers).values
                     - extract_feature(kind, (flat - d).reshape(-1, 3), markers).values) / (2 * h))
    return np.column_stack(cols)


def test_c9_feature_and_pinv_oracles(verdict):
    rng = np.random.default_rng(99)
    worst = 0.0
    for kind, markers in (("two_points", (0, 3)), ("bta", (0, 3, 6)), ("dep_bta", (0, 2, 3, 4, 6))):
        for _ in range(100):
            r = rng.normal(0, 30, (7, 3))
            J, Jfd = feature_jacobian(kind, r, markers), _fd(kind, r, markers)
            worst = max(worst, np.linalg.norm(J - Jfd) / np.linalg.norm(Jfd))
    fj = verdict("C9 feature Jacobian vs FD < 1e-6 rel", worst < 1e-6, f"worst {worst:.3g}")

    pen = 0.0
    for shape in ((6, 6), (6, 2), (2, 6)):
        for _ in range(100):
            A = rng.normal(0, 1, shape)
            P, _ = pseudo_inverse(A)
            pen = max(pen, np.abs(A @ P @ A - A).max(), np.abs(P @ A @ P - P).max(),
                      np.abs((A @ P).T - A @ P).max(), np.abs((P @ A).T - P @ A).max())
    pv = verdict("C9 Penrose conditions to 1e-10", pen < 1e-10, f"worst {pen:.3g}")

    cases = [bending_angle((0, 0, 0), (1, 0, 0), (2, 0, 0)) - 180.0,
             bending_angle((1, 0, 0), (0, 0, 0), (0, 1, 0)) - 90.0,
             twist_angle((5, 1, 0)) - 0.0, twist_angle((5, 0, 1)) - 90.0,
             twist_angle((5, -1, 0)) - 180.0, twist_angle((5, 0, -1)) + 90.0]
    tv = verdict("C9 bending/twist trivial cases to 1e-9 deg", max(map(abs, cases)) < 1e-9,
                 f"worst {max(map(abs, cases)):.3g}")
    assert fj and pv and tv


def test_c10_determinism_and_freeze(verdict, tmp_path):
    cfg = load("racs2_free_space")
    a = emit_outputs(harness.run_scenario(cfg), tmp_path / "a", plots=False)["csv"].read_bytes()
    b = emit_outputs(harness.run_scenario(cfg), tmp_path / "b", plots=False)["csv"].read_bytes()
    det = verdict("C10 byte-identical CSV", a == b, f"{len(a)} bytes")

    rng = np.random.default_rng(5)
    bank = RbfBank(rng.normal(0, 1, (6, 2, 9)), rng.uniform(-1, 1, (6, 9, 2)), np.ones((6, 9)))
    out = adapt_weights(bank, rng.normal(size=2), np.zeros(2), rng.normal(size=6), rng.normal(size=6),
                        rng.normal(size=6), LearnerGains(), 0.05)
    frz = verdict("C10 adaptation freeze at q̇ = 0", out.weights.tobytes() == bank.weights.tobytes())
    assert det and frz
