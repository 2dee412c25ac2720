"""Mean-value engine identification.

Generates square-wave excitation data from a synthetic ground-truth engine,
then identifies the static torque map by batch least squares and the intake
manifold dynamics by sequential gradient descent.

The ground truth is the same model structure the identification targets:

    T_e    = w0 + w1*omega_e + w2*p_im + w3*u_f          (static torque map)
    dp/dt  = (p_stat - p_im) / tau_p                      (manifold dynamics)
    p_stat = a1*omega_e + a2*u_f + a3
    tau_p  = tau1*omega_e + tau2

with torque saturated to TORQUE_SATURATION and Gaussian measurement noise on
the recorded torque. The manifold state is integrated with forward Euler on
the sample grid, so the one-step identification model class is exact and the
truth constants are recoverable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import InvalidArgumentError, SingularSystemError, TrainingDivergedError

# Ground-truth constants of the synthetic engine used for identification.
TRUTH_TORQUE_WEIGHTS = np.array(
    [-0.154712845456646, 0.555616949283938, 4.84689263976440, 0.450411638112411]
)
TRUTH_A1 = 3.07399910699804
TRUTH_A2 = 0.467292644030092
TRUTH_A3 = 0.467292644032403
TRUTH_TAU1 = 5.94705195850280
TRUTH_TAU2 = -0.703974251212264

TORQUE_SATURATION = (-0.2, 6.0)

# Excitation envelopes. The torque envelope is chosen so the true torque never
# reaches saturation (otherwise least squares cannot recover the generator
# weights); the manifold envelope is wide so that (a1, a3) and (tau1, tau2)
# are separately identifiable. The manifold fit never reads the torque column,
# so saturation there is harmless.
TORQUE_OMEGA_RANGE = (0.15, 0.20)
TORQUE_FUEL_RANGE = (0.0, 0.25)
MANIFOLD_OMEGA_RANGE = (0.15, 1.0)
MANIFOLD_FUEL_RANGE = (0.0, 1.0)

OMEGA_GUARD = (0.15, 1.5)  # tau_p must stay positive on this range


@dataclass(frozen=True)
class InputSignal:
    """Piecewise-constant excitation held between pulse boundaries."""

    times: np.ndarray
    u_f: np.ndarray
    omega_e: np.ndarray
    pulse_width: float

    def __post_init__(self):
        if not (len(self.times) == len(self.u_f) == len(self.omega_e)):
            raise InvalidArgumentError("input signal columns must have equal length")


@dataclass
class EngineDataset:
    """Sampled (omega_e, p_im, u_f, T_e) rows, optionally column-normalized.

    `scales` is None for raw data; after normalize() each column has been
    divided by its maximum absolute value and `scales` records the divisors.
    """

    t: np.ndarray
    omega_e: np.ndarray
    p_im: np.ndarray
    u_f: np.ndarray
    T_e: np.ndarray
    split_tag: str = "training"
    scales: dict | None = None

    def __len__(self):
        return len(self.t)

    def normalize(self) -> "EngineDataset":
        if self.scales is not None:
            return self
        scales = {
            "omega_e": float(np.max(np.abs(self.omega_e))),
            "p_im": float(np.max(np.abs(self.p_im))),
            "u_f": float(np.max(np.abs(self.u_f))),
            "t_e": float(np.max(np.abs(self.T_e))),
        }
        for name, s in scales.items():
            if s <= 0.0:
                raise InvalidArgumentError(f"cannot normalize all-zero column '{name}'")
        return EngineDataset(
            t=self.t.copy(),
            omega_e=self.omega_e / scales["omega_e"],
            p_im=self.p_im / scales["p_im"],
            u_f=self.u_f / scales["u_f"],
            T_e=self.T_e / scales["t_e"],
            split_tag=self.split_tag,
            scales=scales,
        )

    def raw_columns(self):
        """Columns in ground-truth units regardless of normalization state."""
        if self.scales is None:
            return self.omega_e, self.p_im, self.u_f, self.T_e
        s = self.scales
        return (
            self.omega_e * s["omega_e"],
            self.p_im * s["p_im"],
            self.u_f * s["u_f"],
            self.T_e * s["t_e"],
        )


@dataclass(frozen=True)
class EngineWeights:
    """Identified torque map and manifold parameters, in ground-truth units."""

    w_te: np.ndarray
    tau1: float
    tau2: float
    a1: float
    a2: float
    a3: float
    scales: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.w_te, dtype=float)
        object.__setattr__(self, "w_te", w)
        vals = np.concatenate([w, [self.tau1, self.tau2, self.a1, self.a2, self.a3]])
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("engine weights must be finite")
        if w.shape != (4,):
            raise InvalidArgumentError("w_te must have 4 entries")

    def tau_p(self, omega_e):
        return self.tau1 * np.asarray(omega_e) + self.tau2

    def p_stat(self, omega_e, u_f):
        return self.a1 * np.asarray(omega_e) + self.a2 * np.asarray(u_f) + self.a3

    def validate_operating_range(self, lo: float = OMEGA_GUARD[0], hi: float = OMEGA_GUARD[1]):
        """tau_p must be positive over the declared engine-speed range."""
        if min(self.tau_p(lo), self.tau_p(hi)) <= 0.0:
            raise InvalidArgumentError(
                f"tau_p is not positive over omega_e in [{lo}, {hi}]"
            )

    def to_json(self, path):
        payload = {
            "w_te": [float(v) for v in self.w_te],
            "tau1": float(self.tau1),
            "tau2": float(self.tau2),
            "a1": float(self.a1),
            "a2": float(self.a2),
            "a3": float(self.a3),
            "scales": {k: float(v) for k, v in self.scales.items()},
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "EngineWeights":
        payload = json.loads(Path(path).read_text())
        return cls(
            w_te=np.array(payload["w_te"], dtype=float),
            tau1=payload["tau1"],
            tau2=payload["tau2"],
            a1=payload["a1"],
            a2=payload["a2"],
            a3=payload["a3"],
            scales=payload.get("scales", {}),
        )


TRUTH_WEIGHTS = EngineWeights(
    w_te=TRUTH_TORQUE_WEIGHTS.copy(),
    tau1=TRUTH_TAU1,
    tau2=TRUTH_TAU2,
    a1=TRUTH_A1,
    a2=TRUTH_A2,
    a3=TRUTH_A3,
)


def generate_excitation(
    duration: float,
    pulse_width: float,
    sample_dt: float,
    seed: int,
    omega_range: tuple = TORQUE_OMEGA_RANGE,
    fuel_range: tuple = TORQUE_FUEL_RANGE,
) -> InputSignal:
    """Random square-wave excitation: both channels redrawn uniformly at every
    pulse boundary and held constant in between."""
    if duration <= 0.0 or pulse_width <= 0.0:
        raise InvalidArgumentError("duration and pulse_width must be positive")
    if pulse_width > duration:
        raise InvalidArgumentError("pulse_width must not exceed duration")
    if not (0.0 < sample_dt <= pulse_width):
        raise InvalidArgumentError("sample_dt must lie in (0, pulse_width]")

    n = int(round(duration / sample_dt))
    times = np.arange(n) * sample_dt
    pulse_idx = np.floor(times / pulse_width + 1e-12).astype(int)
    n_pulses = int(pulse_idx[-1]) + 1

    rng = np.random.default_rng(seed)
    omega_vals = rng.uniform(omega_range[0], omega_range[1], n_pulses)
    fuel_vals = rng.uniform(fuel_range[0], fuel_range[1], n_pulses)
    return InputSignal(
        times=times,
        u_f=fuel_vals[pulse_idx],
        omega_e=omega_vals[pulse_idx],
        pulse_width=pulse_width,
    )


def concat_signals(a: InputSignal, b: InputSignal) -> InputSignal:
    """Append b after a on a common uniform grid."""
    dt_a = a.times[1] - a.times[0] if len(a.times) > 1 else a.pulse_width
    offset = a.times[-1] + dt_a
    return InputSignal(
        times=np.concatenate([a.times, b.times + offset]),
        u_f=np.concatenate([a.u_f, b.u_f]),
        omega_e=np.concatenate([a.omega_e, b.omega_e]),
        pulse_width=min(a.pulse_width, b.pulse_width),
    )


def simulate_truth_engine(
    inputs: InputSignal,
    noise_sigma: float = 0.01,
    seed: int = 0,
    split_tag: str = "training",
) -> EngineDataset:
    """Run the synthetic ground-truth engine over the excitation grid.

    The manifold pressure starts at its stationary value for the first input
    and is integrated with forward Euler on the sample grid. Recorded torque
    is the saturated true torque plus N(0, noise_sigma) measurement noise.
    Deterministic given (inputs, noise_sigma, seed).
    """
    t = inputs.times
    if len(t) < 2:
        raise InvalidArgumentError("need at least two samples")
    dt = float(t[1] - t[0])
    omega = np.asarray(inputs.omega_e, dtype=float)
    u_f = np.asarray(inputs.u_f, dtype=float)

    p = _truth_manifold_rollout(
        omega, u_f, dt, TRUTH_A1, TRUTH_A2, TRUTH_A3, TRUTH_TAU1, TRUTH_TAU2
    )
    w = TRUTH_TORQUE_WEIGHTS
    te = np.clip(
        w[0] + w[1] * omega + w[2] * p + w[3] * u_f,
        TORQUE_SATURATION[0],
        TORQUE_SATURATION[1],
    )
    if noise_sigma > 0.0:
        te = te + np.random.default_rng(seed).normal(0.0, noise_sigma, len(te))
    return EngineDataset(
        t=t.copy(), omega_e=omega.copy(), p_im=p, u_f=u_f.copy(), T_e=te, split_tag=split_tag
    )


@njit(cache=True)
def _truth_manifold_rollout(omega, u_f, dt, a1, a2, a3, tau1, tau2):
    n = len(omega)
    p = np.empty(n)
    pk = a1 * omega[0] + a2 * u_f[0] + a3
    for k in range(n):
        p[k] = pk
        pk = pk + dt * (a1 * omega[k] + a2 * u_f[k] + a3 - pk) / (tau1 * omega[k] + tau2)
    return p


def predict_torque(w_te, omega_e, p_im, u_f):
    """Static torque map w_te . [1, omega_e, p_im, u_f]."""
    w = np.asarray(w_te, dtype=float)
    return w[0] + w[1] * np.asarray(omega_e) + w[2] * np.asarray(p_im) + w[3] * np.asarray(u_f)


def mean_absolute_error(predicted, measured) -> float:
    predicted = np.asarray(predicted, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if predicted.shape != measured.shape or predicted.size == 0:
        raise InvalidArgumentError("vectors must be non-empty and of equal length")
    return float(np.mean(np.abs(predicted - measured)))


_REGRESSOR_NAMES = ("bias", "omega_e", "p_im", "u_f")


def fit_torque_weights(data: EngineDataset) -> np.ndarray:
    """Batch least squares of T_e on [1, omega_e, p_im, u_f].

    The regression runs on the normalized columns; the returned weights are
    mapped back to ground-truth units so they are directly comparable with
    the generator and usable by the plant.
    """
    if len(data) < 4:
        raise InvalidArgumentError("need at least 4 rows to fit 4 weights")
    ds = data.normalize()
    X = np.column_stack([np.ones(len(ds)), ds.omega_e, ds.p_im, ds.u_f])

    _, sing, vt = np.linalg.svd(X, full_matrices=False)
    if sing[-1] <= 1e-10 * sing[0]:
        null = np.abs(vt[-1])
        # the bias column cannot be the culprit on non-degenerate data
        raise SingularSystemError(_REGRESSOR_NAMES[int(np.argmax(null))])

    w_norm, *_ = np.linalg.lstsq(X, ds.T_e, rcond=None)
    s = ds.scales
    return np.array(
        [
            w_norm[0] * s["t_e"],
            w_norm[1] * s["t_e"] / s["omega_e"],
            w_norm[2] * s["t_e"] / s["p_im"],
            w_norm[3] * s["t_e"] / s["u_f"],
        ]
    )


@dataclass(frozen=True)
class ManifoldFit:
    a1: float
    a2: float
    a3: float
    tau1: float
    tau2: float
    final_mae: float
    epochs_used: int

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.tau1, self.tau2])


def manifold_predict_next(params, omega, u_f, p, dt):
    """One-step-ahead prediction of the discretized manifold dynamics."""
    a1, a2, a3, tau1, tau2 = params
    taup = tau1 * omega + tau2
    return p + dt * (a1 * omega + a2 * u_f + a3 - p) / taup


def manifold_loss_gradient(params, omega, u_f, p, dt):
    """Analytic gradient of the summed squared one-step prediction error.

    Returns (sse, grad) over rows k = 0..n-2. Used by the gradient check and
    mirrored sample-by-sample inside the sequential descent kernel.
    """
    a1, a2, a3, tau1, tau2 = params
    w, u, pk, pn = omega[:-1], u_f[:-1], p[:-1], p[1:]
    taup = tau1 * w + tau2
    ps = a1 * w + a2 * u + a3
    pred = pk + dt * (ps - pk) / taup
    e = pn - pred
    # d(pred)/d(theta)
    c = dt / taup
    d_a1 = c * w
    d_a2 = c * u
    d_a3 = c
    d_tau = -dt * (ps - pk) / (taup * taup)
    grad = -2.0 * np.array(
        [
            np.sum(e * d_a1),
            np.sum(e * d_a2),
            np.sum(e * d_a3),
            np.sum(e * d_tau * w),
            np.sum(e * d_tau),
        ]
    )
    return float(np.sum(e * e)), grad


@njit(cache=True)
def _gd_sweep(omega, u_f, p, dt, lr, epochs, init, tol):
    a1 = a2 = a3 = tau1 = tau2 = init
    n = len(p) - 1
    mae_prev = np.inf
    mae = np.inf
    used = 0
    for ep in range(epochs):
        abs_err = 0.0
        for k in range(n):
            w = omega[k]
            u = u_f[k]
            pk = p[k]
            taup = tau1 * w + tau2
            ps = a1 * w + a2 * u + a3
            pred = pk + dt * (ps - pk) / taup
            e = p[k + 1] - pred
            abs_err += abs(e)
            c = lr * e * dt / taup
            gt = -lr * e * dt * (ps - pk) / (taup * taup)
            a1 += c * w
            a2 += c * u
            a3 += c
            tau1 += gt * w
            tau2 += gt
        used = ep + 1
        if not np.isfinite(a1 + a2 + a3 + tau1 + tau2):
            return a1, a2, a3, tau1, tau2, np.nan, used
        mae = abs_err / n
        if abs(mae_prev - mae) < tol:
            break
        mae_prev = mae
    return a1, a2, a3, tau1, tau2, mae, used


def fit_manifold_params(
    data: EngineDataset,
    learning_rate: float = 1.0,
    epochs: int = 2000,
    init: float = 0.1,
    tol: float = 1e-9,
) -> ManifoldFit:
    """Sequential gradient descent on the one-step manifold prediction error.

    Sweeps the dataset in time order once per epoch, updating after every
    sample; stops early when the epoch MAE change falls below `tol`.
    """
    if learning_rate <= 0.0:
        raise InvalidArgumentError("learning_rate must be positive")
    if len(data) < 2:
        raise InvalidArgumentError("need at least 2 rows")
    dts = np.diff(data.t)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(1.0, abs(float(dts[0]))):
        raise InvalidArgumentError("data must be sampled on a uniform time grid")

    omega, p_im, u_f, _ = data.raw_columns()
    if epochs == 0:
        return ManifoldFit(init, init, init, init, init, float("nan"), 0)
    a1, a2, a3, tau1, tau2, mae, used = _gd_sweep(
        np.ascontiguousarray(omega),
        np.ascontiguousarray(u_f),
        np.ascontiguousarray(p_im),
        float(dts[0]),
        float(learning_rate),
        int(epochs),
        float(init),
        float(tol),
    )
    if not np.isfinite(mae):
        raise TrainingDivergedError(used, "manifold gradient descent")
    return ManifoldFit(a1, a2, a3, tau1, tau2, mae, used)


def manifold_validation_mae(fit: ManifoldFit, data: EngineDataset) -> float:
    """One-step prediction MAE of a fitted manifold model on a dataset."""
    omega, p_im, u_f, _ = data.raw_columns()
    dt = float(data.t[1] - data.t[0])
    pred = manifold_predict_next(fit.as_array(), omega[:-1], u_f[:-1], p_im[:-1], dt)
    return mean_absolute_error(pred, p_im[1:])


def save_dataset_csv(data: EngineDataset, path):
    """Persist normalized dataset rows as t,omega_e,p_im,u_f,T_e."""
    ds = data.normalize()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "omega_e", "p_im", "u_f", "T_e"])
        for row in zip(ds.t, ds.omega_e, ds.p_im, ds.u_f, ds.T_e):
            writer.writerow([f"{v:.15g}" for v in row])


def load_dataset_csv(path, split_tag: str = "training", scales: dict | None = None) -> EngineDataset:
    arr = np.genfromtxt(path, delimiter=",", skip_header=1)
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise InvalidArgumentError(f"malformed dataset CSV: {path}")
    return EngineDataset(
        t=arr[:, 0],
        omega_e=arr[:, 1],
        p_im=arr[:, 2],
        u_f=arr[:, 3],
        T_e=arr[:, 4],
        split_tag=split_tag,
        scales=scales,
    )
