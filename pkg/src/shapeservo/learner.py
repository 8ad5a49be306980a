"""Online Jacobian learning with one RBF network per feature row.

Weights are held as a single ``(m, n, k)`` array: ``weights[i]`` is the
``n x k`` matrix of network ``i``. The flat weight vector groups columns
network by network (network ``i``, neuron ``j``, actuator ``a`` maps to
``(i * k + j) * n + a``), so ``J_hat(q) @ qdot == M(q, qdot) @ vec``.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadRange, DimensionMismatch


@dataclass
class RbfBank:
    weights: np.ndarray  # (m, n, k)
    centers: np.ndarray  # (m, k, n)
    widths: np.ndarray  # (m, k)
    w_max: float = 100.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        m, n, k = self.weights.shape
        if self.centers.shape != (m, k, n) or self.widths.shape != (m, k):
            raise DimensionMismatch("centers/widths do not match weight dims")
        if k < 1 or np.any(self.widths <= 0):
            raise ValueError("need k >= 1 and positive widths")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.weights.shape

    def copy(self) -> "RbfBank":
        return copy.deepcopy(self)

    def vector(self) -> np.ndarray:
        return vectorize(self.weights)

    def with_vector(self, vec) -> "RbfBank":
        out = self.copy()
        out.weights = devectorize(vec, self.dims)
        return out


def vectorize(weights: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(weights, (0, 2, 1))).reshape(-1)


def devectorize(vec, dims) -> np.ndarray:
    m, n, k = dims
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (m * n * k,):
        raise DimensionMismatch(f"weight vector of length {vec.shape} does not fit dims {dims}")
    return np.ascontiguousarray(vec.reshape(m, k, n).transpose(0, 2, 1))


def rbf_activation(bank: RbfBank, q) -> np.ndarray:
    """Gaussian activations ``(m, k)``; row ``i`` belongs to network ``i``."""
    d = bank.centers - np.asarray(q, dtype=float)[None, None, :]
    return np.exp(-np.einsum("ijn,ijn->ij", d, d) / bank.widths**2)


def estimate_jacobian(bank: RbfBank, q, theta: np.ndarray | None = None) -> np.ndarray:
    theta = rbf_activation(bank, q) if theta is None else theta
    return np.einsum("iaj,ij->ia", bank.weights, theta)


def build_parameterization(q, qdot, dims, bank: RbfBank | None = None, theta=None) -> np.ndarray:
    """Regressor ``M`` (m x kmn) with ``M @ W_vec == J_hat(q) @ qdot``.

    Block-diagonal: row ``i`` holds ``kron(theta_i(q), qdot)`` in the slot of
    network ``i``. Either a bank (for its centers/widths) or precomputed
    activations must be supplied.
    """
    m, n, k = dims
    qdot = np.asarray(qdot, dtype=float)
    if qdot.shape != (n,):
        raise DimensionMismatch(f"qdot has shape {qdot.shape}, expected ({n},)")
    if theta is None:
        if bank is None:
            raise ValueError("need a bank or activations")
        if bank.dims != (m, n, k):
            raise DimensionMismatch("bank dims differ from requested dims")
        theta = rbf_activation(bank, q)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (m, k):
        raise DimensionMismatch(f"activations have shape {theta.shape}, expected ({m}, {k})")
    M = np.zeros((m, m * k * n))
    for i in range(m):
        M[i, i * k * n : (i + 1) * k * n] = np.kron(theta[i], qdot)
    return M


# --------------------------------------------------------------------------- gains & predictor


@dataclass
class LearnerGains:
    alpha_x: float = 0.3
    beta_x: float = 0.04
    k_e: float = 0.01
    k_x: float = 0.01
    k_r: float = 0.2
    gamma_inv: float = 0.1  # scalar multiple of identity
    eps_sat: float = 0.5
    w_max: float = 100.0
    b_delta1: float = 0.0
    b_delta2: float = 0.0

    def __post_init__(self):
        for name in ("alpha_x", "beta_x", "k_e", "k_x", "k_r", "gamma_inv", "eps_sat", "w_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.b_delta1 < 0 or self.b_delta2 < 0:
            raise ValueError("perturbation bounds must be non-negative")


def sat(v, eps: float) -> np.ndarray:
    """Boundary-layer saturation: linear inside ``|v| <= eps``, sign outside."""
    return np.clip(np.asarray(v, dtype=float) / eps, -1.0, 1.0)


def predict_flow(bank: RbfBank, q, qdot, x_tilde, gains: LearnerGains) -> np.ndarray:
    x_tilde = np.asarray(x_tilde, dtype=float)
    return estimate_jacobian(bank, q) @ np.asarray(qdot, dtype=float) + gains.alpha_x * x_tilde \
        + gains.beta_x * sat(x_tilde, gains.eps_sat)


@dataclass
class PredictorState:
    x_hat: np.ndarray
    x_tilde: np.ndarray
    last_x: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, x0, t: float = 0.0) -> "PredictorState":
        """Zero shape estimate, so the estimation error starts at the measurement."""
        x0 = np.asarray(x0, dtype=float)
        return cls(np.zeros_like(x0), x0.copy(), x0.copy(), t)

    def copy(self) -> "PredictorState":
        return copy.deepcopy(self)


def advance_predictor(state: PredictorState, bank: RbfBank, q, qdot, x_meas, dt: float, gains: LearnerGains):
    """One predictor step. Returns ``(new_state, x_tilde_dot, r_x)``.

    ``q``/``qdot`` are the configuration and command held over the elapsed
    interval; the flow prediction uses the estimation error from before the update.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x_meas = np.asarray(x_meas, dtype=float)
    flow_hat = predict_flow(bank, q, qdot, state.x_tilde, gains)
    x_hat = state.x_hat + dt * flow_hat
    x_tilde = x_meas - x_hat
    x_tilde_dot = (x_meas - state.last_x) / dt - flow_hat
    r_x = x_tilde_dot + gains.alpha_x * x_tilde
    return PredictorState(x_hat, x_tilde, x_meas.copy(), state.t + dt), x_tilde_dot, r_x


def adapt_weights(bank: RbfBank, q, qdot, e, x_tilde, r_x, gains: LearnerGains, dt: float,
                  theta: np.ndarray | None = None) -> RbfBank:
    """Composite update driven by control error, estimation error and filtered error."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    qdot = np.asarray(qdot, dtype=float)
    drive = gains.k_e * np.asarray(e, dtype=float) + gains.k_x * np.asarray(x_tilde, dtype=float) \
        + gains.k_r * np.asarray(r_x, dtype=float)
    theta = rbf_activation(bank, q) if theta is None else theta
    # M^T drive laid out as (m, n, k) without forming M
    grad = drive[:, None, None] * qdot[None, :, None] * theta[:, None, :]
    if not np.any(grad):
        return bank
    w = bank.weights
    w_max = min(gains.w_max, bank.w_max)
    outward = ((w >= w_max) & (grad > 0)) | ((w <= -w_max) & (grad < 0))
    grad = np.where(outward, 0.0, grad)
    out = copy.copy(bank)
    out.weights = np.clip(w + dt * gains.gamma_inv * grad, -w_max, w_max)
    return out


# --------------------------------------------------------------------------- initialisation


def _korobov_generator(k: int, n: int) -> int:
    """Pick the lattice generator with the largest minimum pairwise point spacing."""
    best, best_d = 1, -1.0
    for g in range(1, k):
        if math.gcd(g, k) != 1:
            continue
        pts = _lattice(k, n, g)
        d = np.min([np.linalg.norm(pts[a] - pts[b]) for a in range(k) for b in range(a)]) if k > 1 else 1.0
        if d > best_d + 1e-12:
            best, best_d = g, d
    return best


def _lattice(k: int, n: int, g: int) -> np.ndarray:
    z = np.array([pow(g, a, k) for a in range(n)])
    return ((np.arange(k)[:, None] * z[None, :]) % k) / max(k - 1, 1)


def basis_centers(k: int, q_min, q_max) -> tuple[np.ndarray, np.ndarray]:
    """Uniform basis centers ``(k, n)`` over the box and their widths ``(k,)``.

    A full tensor grid when ``k`` is a perfect n-th power, otherwise a rank-1
    (Korobov) lattice whose coordinates each take the ``k`` evenly spaced levels.
    Widths are 1.5 times the grid spacing (nearest-neighbour distance for lattices).
    """
    lo, hi = np.asarray(q_min, dtype=float), np.asarray(q_max, dtype=float)
    if lo.shape != hi.shape or np.any(hi - lo <= 0):
        raise BadRange("q_range must be a non-degenerate box")
    n = lo.size
    c = round(k ** (1.0 / n))
    if c**n == k and c > 1:
        axes = [np.linspace(0.0, 1.0, c)] * n
        unit = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    elif k == 1:
        unit = np.full((1, n), 0.5)
    else:
        unit = _lattice(k, n, _korobov_generator(k, n))
    centers = lo + unit * (hi - lo)
    if k == 1:
        spacing = float(np.mean(hi - lo))
    elif c**n == k:
        spacing = float(np.mean((hi - lo) / (c - 1)))
    else:
        d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        spacing = float(np.min(d, axis=1).mean())
    return centers, np.full(k, 1.5 * spacing)


def init_bank(dims, q_range, seed: int, weight_scale: float = 0.1, w_max: float = 100.0) -> RbfBank:
    """Seeded bank: per-network shuffled basis, normalised small random weights."""
    m, n, k = dims
    q_min, q_max = q_range
    basis, widths = basis_centers(k, q_min, q_max)
    if basis.shape[1] != n:
        raise BadRange("q_range dimension does not match n")
    rng = np.random.default_rng(seed)
    centers = np.empty((m, k, n))
    sig = np.empty((m, k))
    for i in range(m):
        order = rng.permutation(k)
        centers[i] = basis[order]
        sig[i] = widths[order]
    weights = rng.normal(0.0, math.sqrt(2.0 / k), size=(m, n, k)) * weight_scale
    return RbfBank(weights, centers, sig, w_max)


# --------------------------------------------------------------------------- serialization


def bank_to_dict(bank: RbfBank, oracle: bool = False, extra: dict | None = None) -> dict:
    m, n, k = bank.dims
    doc = {
        "dims": {"m": m, "n": n, "k": k},
        "centers": bank.centers.reshape(-1).tolist(),
        "widths": bank.widths.reshape(-1).tolist(),
        "weights": bank.vector().tolist(),
        "w_max": bank.w_max,
        "oracle": bool(oracle),
    }
    if extra:
        doc.update(extra)
    return doc


def bank_from_dict(doc: dict) -> RbfBank:
    d = doc["dims"]
    m, n, k = d["m"], d["n"], d["k"]
    return RbfBank(
        devectorize(doc["weights"], (m, n, k)),
        np.asarray(doc["centers"], dtype=float).reshape(m, k, n),
        np.asarray(doc["widths"], dtype=float).reshape(m, k),
        float(doc.get("w_max", 100.0)),
    )


def save_bank(bank: RbfBank, path, oracle: bool = False, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(bank_to_dict(bank, oracle, extra), indent=1))


def load_bank(path) -> RbfBank:
    return bank_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- warm-up


@dataclass
class WarmupSpec:
    duration: float = 120.0
    amplitude: float = 0.2
    frequency: float = 0.5  # Hz of the slowest actuator; the others run faster, at non-harmonic multiples

    def __post_init__(self):
        if self.duration < 0 or self.amplitude < 0 or self.frequency <= 0:
            raise ValueError("warm-up needs duration >= 0, amplitude >= 0, frequency > 0")


def excitation(n: int, amplitude: float, frequency: float, seed: int):
    """Velocity profile ``t -> qdot`` of per-actuator sinusoids with distinct frequencies.

    Positions follow ``q0 + amplitude * sin(omega t)``, so the excursion stays
    within ``amplitude`` of the starting pose. The sign of each actuator's
    sinusoid is drawn from ``seed``.
    """
    rng = np.random.default_rng([seed, 7])
    omega = 2 * np.pi * frequency * (1.0 + 0.55 * np.arange(n) ** 1.1)
    sign = rng.choice([-1.0, 1.0], n)

    def qdot(t: float) -> np.ndarray:
        return sign * amplitude * omega * np.cos(omega * t)

    return qdot


def learning_step(sim, bank: RbfBank, predictor: PredictorState, gains: LearnerGains, e, dt: float):
    """Predictor advance plus weight adaptation for the interval ``sim`` last executed.

    Returns ``(bank, predictor, x_tilde_dot, r_x, flow)``; before any interval has
    been commanded nothing is advanced and the filtered error is ``alpha_x * x_tilde``.
    """
    x = sim.x
    if sim.last_interval is None:
        zero = np.zeros_like(x)
        return bank, predictor, zero, gains.alpha_x * predictor.x_tilde, zero
    q_prev, qdot_prev = sim.last_interval
    flow = (x - predictor.last_x) / dt
    predictor, x_tilde_dot, r_x = advance_predictor(predictor, bank, q_prev, qdot_prev, x, dt, gains)
    bank = adapt_weights(bank, q_prev, qdot_prev, e, predictor.x_tilde, r_x, gains, dt)
    return bank, predictor, x_tilde_dot, r_x, flow


def warmup(sim, bank: RbfBank, predictor: PredictorState, gains: LearnerGains, duration: float,
           amplitude: float, seed: int, dt: float = 0.05, frequency: float = 0.5,
           samples: list | None = None):
    """Excite the plant around its current configuration with the controller off.

    Slow sinusoidal actuator motions drive the predictor and the adaptation law
    (control error held at zero). When ``samples`` is given, every
    ``(q, qdot, measured_flow)`` triple is appended for later bound estimation.
    Returns the warmed ``(bank, predictor)``.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    n = bank.dims[1]
    profile = excitation(n, amplitude, frequency, seed)
    zero_e = np.zeros(bank.dims[0])
    t0 = sim.t
    for s in range(int(round(duration / dt))):
        bank, predictor, _, _, flow = learning_step(sim, bank, predictor, gains, zero_e, dt)
        if samples is not None and sim.last_interval is not None:
            samples.append((sim.last_interval[0], sim.last_interval[1], flow))
        qdot = profile(sim.t - t0) if amplitude > 0 else np.zeros(n)
        qdot = np.clip(qdot, -sim.cfg.qdot_max, sim.cfg.qdot_max)
        # stay inside the actuator box so the plant never silently clamps the excitation
        q_next = sim.q + qdot * dt
        lo, hi = sim.cfg.q_min, sim.cfg.q_max
        qdot = np.where((q_next < lo) | (q_next > hi), 0.0, qdot)
        sim.command(qdot, dt)
    bank, predictor, _, _, flow = learning_step(sim, bank, predictor, gains, zero_e, dt)
    if samples is not None and sim.last_interval is not None:
        samples.append((sim.last_interval[0], sim.last_interval[1], flow))
    sim.last_interval = None
    return bank, predictor


def estimate_perturbation_bounds(bank: RbfBank, samples, dt: float, factor: float = 3.0) -> tuple[float, float]:
    """Bounds on the lumped perturbation from warm-up data.

    Uses the end-of-warm-up weights as a stand-in for the ideal ones: the
    residual ``flow - M(q, qdot) W_end`` is the perturbation proxy. Returns
    ``factor`` times its largest norm and largest difference quotient.
    """
    if not samples:
        return 0.0, 0.0
    vec = bank.vector()
    theta_bank = bank
    resid = []
    for q, qdot, flow in samples:
        M = build_parameterization(q, qdot, bank.dims, theta_bank)
        resid.append(flow - M @ vec)
    resid = np.asarray(resid)
    b1 = float(np.max(np.linalg.norm(resid, axis=1)))
    b2 = float(np.max(np.linalg.norm(np.diff(resid, axis=0), axis=1)) / dt) if len(resid) > 1 else 0.0
    return factor * b1, factor * b2
