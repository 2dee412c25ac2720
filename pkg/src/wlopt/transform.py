"""Hat-time transform, discretization and tracking cost.

Each phase of the mode schedule is mapped onto a unit interval of the
transformed time variable, so the switching instants become free parameters:
phase i occupies t_hat in [i, i+1) and real time is affine within the phase.
The Euler discretization then runs on a uniform hat-time grid with step
delta_hat, N' = P / delta_hat steps in total for P phases.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import (
    AmbiguousInverseError,
    GridMismatchError,
    InvalidArgumentError,
)
from .trajectory import Trajectory


class SwitchedDynamics(Protocol):
    """Control-affine switched system evaluated in normalized units."""

    n_states: int
    n_controls: int

    def drift_input(self, x: np.ndarray, mode) -> tuple[np.ndarray, np.ndarray]:
        """Return (f(x), g(x)) broadcasting over leading axes of x."""
        ...


class LinearSwitchedDynamics:
    """xdot = A_v x + B_v u per mode; modes are indices into the matrix lists."""

    def __init__(self, A_list: Sequence[np.ndarray], B_list: Sequence[np.ndarray]):
        self.A = [np.asarray(A, dtype=float) for A in A_list]
        self.B = [np.asarray(B, dtype=float) for B in B_list]
        self.n_states = self.A[0].shape[0]
        self.n_controls = self.B[0].shape[1]
        for A, B in zip(self.A, self.B):
            if A.shape != (self.n_states, self.n_states) or B.shape != (self.n_states, self.n_controls):
                raise InvalidArgumentError("inconsistent matrix shapes")

    def drift_input(self, x, mode):
        x = np.asarray(x, dtype=float)
        A = self.A[mode]
        B = self.B[mode]
        f = x @ A.T
        g = np.broadcast_to(B, x.shape[:-1] + B.shape).copy()
        return f, g


@dataclass(frozen=True)
class ModeSchedule:
    """Ordered phases with their switching instants.

    modes has length P; switch_times holds t_1..t_{P-1}; boundaries are
    t0 <= t_1 <= ... <= t_{P-1} <= tf.
    """

    modes: tuple
    switch_times: tuple
    t0: float
    tf: float

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "switch_times", tuple(float(s) for s in self.switch_times))
        if len(self.modes) != len(self.switch_times) + 1:
            raise InvalidArgumentError("need len(modes) == len(switch_times) + 1")
        b = self.boundaries
        if np.any(np.diff(b) < -1e-12):
            raise InvalidArgumentError(f"switch times must be nondecreasing within [t0, tf]: {b}")

    @property
    def phase_count(self) -> int:
        return len(self.modes)

    @property
    def boundaries(self) -> np.ndarray:
        return np.array([self.t0, *self.switch_times, self.tf], dtype=float)

    @property
    def phase_lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def with_switch_times(self, switch_times) -> "ModeSchedule":
        return replace(self, switch_times=tuple(float(s) for s in switch_times))

    def mode_of_phase(self, i: int):
        return self.modes[i]


@dataclass(frozen=True)
class HatGrid:
    """Uniform hat-time grid: n_per_phase = 1/delta_hat steps in each phase."""

    delta_hat: float
    phase_count: int

    def __post_init__(self):
        if self.delta_hat <= 0.0 or self.phase_count < 1:
            raise InvalidArgumentError("delta_hat must be positive, phase_count >= 1")
        n = round(1.0 / self.delta_hat)
        if abs(n * self.delta_hat - 1.0) > 1e-9:
            raise InvalidArgumentError("delta_hat must divide 1 exactly")

    @property
    def n_per_phase(self) -> int:
        return round(1.0 / self.delta_hat)

    @property
    def n_prime(self) -> int:
        return self.phase_count * self.n_per_phase

    @property
    def phase_boundaries(self) -> np.ndarray:
        return np.arange(self.phase_count + 1) * self.n_per_phase

    def phase_of_step(self, k_hat) -> np.ndarray | int:
        """Phase index owning step k_hat (right-continuous; k = N' maps to the
        last phase)."""
        k = np.asarray(k_hat)
        if np.any(k < 0) or np.any(k > self.n_prime):
            raise InvalidArgumentError(f"step index outside [0, {self.n_prime}]")
        return np.minimum(k // self.n_per_phase, self.phase_count - 1).astype(int)


def hat_to_time(t_hat, sched: ModeSchedule):
    """Map hat time in [0, P] to real time; affine within each phase."""
    th = np.asarray(t_hat, dtype=float)
    P = sched.phase_count
    if np.any(th < -1e-12) or np.any(th > P + 1e-12):
        raise InvalidArgumentError(f"hat time outside [0, {P}]")
    th = np.clip(th, 0.0, P)
    i = np.minimum(np.floor(th).astype(int), P - 1)
    b = sched.boundaries
    lengths = sched.phase_lengths
    out = b[i] + lengths[i] * (th - i)
    return out if out.ndim else float(out)


def time_to_hat(t, sched: ModeSchedule):
    """Inverse of hat_to_time; errors inside a zero-length phase."""
    t = float(t)
    b = sched.boundaries
    if t < b[0] - 1e-12 or t > b[-1] + 1e-12:
        raise InvalidArgumentError(f"time {t} outside [{b[0]}, {b[-1]}]")
    lengths = sched.phase_lengths
    for i, dl in enumerate(lengths):
        if dl == 0.0 and abs(t - b[i]) < 1e-15 and b[0] < t < b[-1]:
            raise AmbiguousInverseError(f"time {t} lies inside a zero-length phase")
    if t >= b[-1]:
        return float(sched.phase_count)
    i = int(np.searchsorted(b, t, side="right") - 1)
    i = min(max(i, 0), sched.phase_count - 1)
    while lengths[i] == 0.0 and i + 1 < sched.phase_count:
        i += 1
    return float(i + (t - b[i]) / lengths[i])


def transformed_derivative(x, u, t_hat, sched: ModeSchedule, dynamics: SwitchedDynamics):
    """dx/d(t_hat) = (f_v(x) + g_v(x) u) * phase_length, v = phase of t_hat."""
    th = float(t_hat)
    P = sched.phase_count
    if th < -1e-12 or th > P + 1e-12:
        raise InvalidArgumentError(f"hat time outside [0, {P}]")
    i = min(int(np.floor(np.clip(th, 0.0, P))), P - 1)
    f, g = dynamics.drift_input(np.asarray(x, dtype=float), sched.mode_of_phase(i))
    u = np.asarray(u, dtype=float)
    return (f + np.einsum("...ij,...j->...i", g, u)) * sched.phase_lengths[i]


def discretize_step(x, u, k_hat: int, sched: ModeSchedule, grid: HatGrid,
                    dynamics: SwitchedDynamics):
    """Euler step on the hat grid: x + (f + g u) * phase_length * delta_hat.

    Applies the dynamics' post-step event projection when it defines one.
    """
    if grid.phase_count != sched.phase_count:
        raise GridMismatchError("grid and schedule phase counts differ")
    if not 0 <= k_hat < grid.n_prime:
        raise InvalidArgumentError(f"step index outside [0, {grid.n_prime})")
    i = int(grid.phase_of_step(k_hat))
    mode = sched.mode_of_phase(i)
    x = np.asarray(x, dtype=float)
    f, g = dynamics.drift_input(x, mode)
    u = np.asarray(u, dtype=float)
    x_new = x + (f + np.einsum("...ij,...j->...i", g, u)) * (
        sched.phase_lengths[i] * grid.delta_hat
    )
    project = getattr(dynamics, "project_step", None)
    if project is not None:
        x_new = project(x, x_new, mode)
    return x_new


@dataclass(frozen=True)
class CostWeights:
    """Quadratic tracking cost: terminal (x-r)' S (x-r) plus stage integrals
    0.5 (x-r)' Q (x-r) + 0.5 u' R u. The reference is a callable r(t) -> (n,)
    vectorized over time arrays."""

    S: np.ndarray
    Q_bar: np.ndarray
    R_bar: np.ndarray
    reference: Callable

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q_bar, dtype=float))
        R = np.atleast_2d(np.asarray(self.R_bar, dtype=float))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "Q_bar", Q)
        object.__setattr__(self, "R_bar", R)
        for name, M in (("S", S), ("Q_bar", Q)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise InvalidArgumentError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(M)) < -1e-10:
                raise InvalidArgumentError(f"{name} must be positive semidefinite")
        if not np.allclose(R, R.T, atol=1e-12):
            raise InvalidArgumentError("R_bar must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise InvalidArgumentError("R_bar must be positive definite")

    def r_at(self, t):
        return np.asarray(self.reference(t), dtype=float)


class ConstantReference:
    """r(t) = r0."""

    def __init__(self, r0):
        self.r0 = np.asarray(r0, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self.r0.copy()
        return np.broadcast_to(self.r0, t.shape + self.r0.shape).copy()


class SinePathReference:
    """Reference whose listed channels follow dr/dt = sin(omega t), i.e.
    r_c(t) = r0_c + (1 - cos(omega t)) / omega, all others constant."""

    def __init__(self, r0, channels=(4, 5), omega=np.pi):
        self.r0 = np.asarray(r0, dtype=float)
        self.channels = tuple(int(c) for c in channels)
        self.omega = float(omega)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(self.r0, t.shape + self.r0.shape).copy()
        bump = (1.0 - np.cos(self.omega * t)) / self.omega
        for c in self.channels:
            out[..., c] = self.r0[c] + bump
        return out


class InterpolatedReference:
    """Linear interpolation of sampled reference rows (times must be sorted)."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.times) != len(self.values):
            raise InvalidArgumentError("times and values must have equal length")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        cols = [
            np.interp(t, self.times, self.values[:, j])
            for j in range(self.values.shape[1])
        ]
        return np.stack(cols, axis=-1)


def _stage_multiplier(k_hat: int, sched: ModeSchedule, grid: HatGrid) -> float:
    i = int(grid.phase_of_step(k_hat))
    return float(sched.phase_lengths[i] * grid.delta_hat)


def stage_cost(x, u, k_hat: int, sched: ModeSchedule, grid: HatGrid, weights: CostWeights):
    """0.5 (x-r)' Q dt (x-r) + 0.5 u' R dt u with dt = phase_length*delta_hat."""
    if not 0 <= k_hat < grid.n_prime:
        raise InvalidArgumentError(f"step index outside [0, {grid.n_prime})")
    mult = _stage_multiplier(k_hat, sched, grid)
    t = hat_to_time(k_hat * grid.delta_hat, sched)
    e = np.asarray(x, dtype=float) - weights.r_at(t)
    u = np.asarray(u, dtype=float)
    qx = 0.5 * mult * np.einsum("...i,ij,...j->...", e, weights.Q_bar, e)
    ru = 0.5 * mult * np.einsum("...i,ij,...j->...", u, weights.R_bar, u)
    out = qx + ru
    return out if np.ndim(out) else float(out)


def terminal_cost(x_N, r_N, S):
    """(x - r)' S (x - r), written without the 1/2 factor."""
    e = np.asarray(x_N, dtype=float) - np.asarray(r_N, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    out = np.einsum("...i,ij,...j->...", e, S, e)
    return out if np.ndim(out) else float(out)


def total_cost(traj: Trajectory, sched: ModeSchedule, grid: HatGrid, weights: CostWeights) -> float:
    """Stage sum plus terminal cost of a rollout generated on this grid."""
    if traj.n_steps != grid.n_prime:
        raise GridMismatchError(
            f"trajectory has {traj.n_steps} steps, grid expects {grid.n_prime}"
        )
    stages = np.array(
        [
            stage_cost(traj.states[k], traj.controls[k], k, sched, grid, weights)
            for k in range(traj.n_steps)
        ]
    )
    r_N = weights.r_at(sched.tf)
    return float(np.sum(stages) + terminal_cost(traj.states[-1], r_N, weights.S))
