"""Switched wheel-loader dynamics.

Eleven states (stored nondimensionally, each divided by its scale):

    x1 omega_e   normalized engine speed        x7  V     vehicle speed [m/s]
    x2 p_im      normalized manifold pressure   x8  beta  heading [rad]
    x3 theta     boom angle [rad]               x9  delta steering angle [rad]
    x4 omega     boom rate [rad/s]              x10 u_p   lift pressure [Pa]
    x5 X         position [m]                   x11 u_s   steering rate [rad/s]
    x6 Y         position [m]

Controls: u1 = dp/dt of lift pressure, u2 = steering acceleration,
u3 = fuel per cycle, u4 = braking force. The map (x, u) -> xdot is affine
in u for every gear mode.

All public evaluators broadcast over leading axes so batches of states can be
processed in one call.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import EngineWeights, predict_torque
from .errors import (
    BoomRangeError,
    ConfigError,
    EngineStallError,
    InvalidArgumentError,
    SimulationAbortedError,
    SteeringLimitError,
    WloptError,
)
from .trajectory import Trajectory

GAMMA_BACKWARD = -60
GAMMA_STOP = 0
GAMMA_FORWARD = 60

N_STATES = 11
N_CONTROLS = 4

# indices into the state vector
IX_OMEGA_E, IX_P_IM, IX_THETA, IX_OMEGA, IX_X, IX_Y, IX_V, IX_BETA, IX_DELTA, IX_UP, IX_US = range(11)


@dataclass(frozen=True)
class Mode:
    """Gear mode; gamma is the fixed gear ratio."""

    gamma: int

    _LEGAL = (GAMMA_BACKWARD, GAMMA_STOP, GAMMA_FORWARD)

    def __post_init__(self):
        if self.gamma not in self._LEGAL:
            raise InvalidArgumentError(f"gamma must be one of {self._LEGAL}, got {self.gamma}")

    @property
    def name(self) -> str:
        return {GAMMA_BACKWARD: "backward", GAMMA_STOP: "stop", GAMMA_FORWARD: "forward"}[self.gamma]

    @classmethod
    def backward(cls):
        return cls(GAMMA_BACKWARD)

    @classmethod
    def stop(cls):
        return cls(GAMMA_STOP)

    @classmethod
    def forward(cls):
        return cls(GAMMA_FORWARD)

    @classmethod
    def from_name(cls, name: str) -> "Mode":
        try:
            return {"backward": cls.backward(), "stop": cls.stop(), "forward": cls.forward()}[name]
        except KeyError:
            raise InvalidArgumentError(f"unknown mode name '{name}'") from None


# Default nondimensionalization scales.
DEFAULT_STATE_SCALES = (1.0, 1.0, math.pi / 2, 1.0, 30.0, 30.0, 10.0, math.pi, 0.6, 5e5, 0.5)
DEFAULT_CONTROL_SCALES = (5e5, 0.5, 1.0, 5e5)

# Parameter names that a plant parameter file must define.
TABLE_PARAM_NAMES = (
    "J_e", "r1", "r2", "theta1", "n_lc", "A_lc", "y_g", "eta_lift", "y_off",
    "M_tot", "mu_roll", "F_roll", "L", "rho_f", "R_w", "T1", "T2", "eta_gb",
    "C_st", "F_buc", "F_arm", "I_boom",
)


@dataclass(frozen=True)
class WLParams:
    """Wheel-loader parameters plus unit scales for the normalized dynamics."""

    J_e: float = 0.43
    r1: float = 2.0
    r2: float = 2.0
    theta1: float = math.pi / 6
    n_lc: float = 2.0
    A_lc: float = 0.0284
    y_g: float = 2.13
    eta_lift: float = 0.5
    y_off: float = 0.5
    M_tot: float = 31330.0
    mu_roll: float = 0.03
    F_roll: float = 9.81 * 0.03 * 31330.0
    L: float = 3.7
    rho_f: float = 832.0
    R_w: float = 0.3175
    T1: float = 5.0
    T2: float = -2.5
    eta_gb: float = 0.9
    C_st: float = 1e5
    F_buc: float = 0.0981 * 31330.0
    F_arm: float = 0.0981 * 31330.0
    I_boom: float = 1200.0

    # unit closure for the engine-power balance (the torque map is normalized,
    # the load powers are in watts): omega_scale maps normalized engine speed
    # to rad/s, torque_scale maps normalized torque to Nm, power_scale maps
    # watts back into the normalized torque balance of the speed equation.
    omega_scale: float = 300.0
    torque_scale: float = 60.0
    power_scale: float = 72000.0

    state_scales: tuple = DEFAULT_STATE_SCALES
    control_scales: tuple = DEFAULT_CONTROL_SCALES

    delta_max: float = 0.6
    theta_min: float = -math.pi / 4
    theta_max: float = math.pi / 2
    theta_tol: float = 0.02          # integrator stages may poke slightly past the stops
    omega_e_min: float = 0.15
    omega_e_max: float = 1.5

    def __post_init__(self):
        for name in ("J_e", "r1", "r2", "n_lc", "A_lc", "M_tot", "R_w", "I_boom", "L"):
            if getattr(self, name) <= 0.0:
                raise InvalidArgumentError(f"parameter {name} must be positive")
        for name in ("eta_lift", "eta_gb"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise InvalidArgumentError(f"parameter {name} must lie in (0, 1]")
        expected_froll = 9.81 * self.mu_roll * self.M_tot
        if abs(self.F_roll - expected_froll) > 1e-6 * expected_froll:
            raise InvalidArgumentError("F_roll must equal 9.81 * mu_roll * M_tot")
        if np.any(np.asarray(self.state_scales) <= 0) or np.any(np.asarray(self.control_scales) <= 0):
            raise InvalidArgumentError("scales must be positive")

    @property
    def xs(self) -> np.ndarray:
        return np.asarray(self.state_scales, dtype=float)

    @property
    def us(self) -> np.ndarray:
        return np.asarray(self.control_scales, dtype=float)

    @classmethod
    def from_file(cls, path) -> "WLParams":
        """Load from a flat JSON object keyed by the parameter names."""
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"plant parameter file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed plant parameter file {path}: {exc}") from None
        missing = [name for name in TABLE_PARAM_NAMES if name not in payload]
        if missing:
            raise ConfigError(f"plant parameter file {path} is missing key '{missing[0]}'")
        kwargs = {k: payload[k] for k in TABLE_PARAM_NAMES}
        for opt in ("omega_scale", "torque_scale", "power_scale", "delta_max"):
            if opt in payload:
                kwargs[opt] = payload[opt]
        if "state_scales" in payload:
            kwargs["state_scales"] = tuple(payload["state_scales"])
        if "control_scales" in payload:
            kwargs["control_scales"] = tuple(payload["control_scales"])
        return cls(**kwargs)

    def to_file(self, path):
        payload = {name: getattr(self, name) for name in TABLE_PARAM_NAMES}
        payload.update(
            omega_scale=self.omega_scale,
            torque_scale=self.torque_scale,
            power_scale=self.power_scale,
            delta_max=self.delta_max,
            state_scales=list(self.state_scales),
            control_scales=list(self.control_scales),
        )
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def nondimensionalize(x_physical, scales):
    scales = np.asarray(scales, dtype=float)
    if np.any(scales <= 0.0):
        raise InvalidArgumentError("scales must be positive")
    return np.asarray(x_physical, dtype=float) / scales


def redimensionalize(x_normalized, scales):
    scales = np.asarray(scales, dtype=float)
    if np.any(scales <= 0.0):
        raise InvalidArgumentError("scales must be positive")
    return np.asarray(x_normalized, dtype=float) * scales


def lift_torques(theta, u_p, p: WLParams):
    """Boom torque balance terms (cylinder, bucket weight, arm weight).

    theta in rad, u_p in Pa. The cylinder force acts on a two-segment arm
    (lengths r1, r2, bend theta1) at angle alpha formed by the mount offsets.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < p.theta_min - p.theta_tol) or np.any(theta > p.theta_max + p.theta_tol):
        raise BoomRangeError(
            f"boom angle outside [{p.theta_min:.4f}, {p.theta_max:.4f}] rad"
        )
    theta_c = np.clip(theta, p.theta_min, p.theta_max)
    alpha = np.arctan2(p.y_g - p.y_off, p.r1 * np.cos(theta_c)) + theta_c
    alpha = np.clip(alpha, 1e-9, math.pi - 1e-9)
    f_cyl = p.n_lc * p.A_lc * np.asarray(u_p, dtype=float)
    t_cyl = f_cyl * p.r1 * np.sin(alpha)
    lever_buc = p.r1 * np.cos(theta_c) + p.r2 * np.cos(theta_c + p.theta1)
    t_buc = p.F_buc * lever_buc
    t_arm = p.F_arm * (p.r1 / 2.0) * np.cos(theta_c)
    return t_cyl, t_buc, t_arm


def pump_torque(omega_e, V, mode: Mode, p: WLParams):
    """Normalized pump torque line max(0, T1 + T2*nu) with signed speed ratio.

    nu uses gamma*V so that mirrored motion (gamma -> -gamma, V -> -V) sees
    the same operating point.
    """
    omega_e = np.asarray(omega_e, dtype=float)
    nu = mode.gamma * np.asarray(V, dtype=float) / (p.R_w * omega_e * p.omega_scale)
    return np.maximum(0.0, p.T1 + p.T2 * nu)


def traction_force(omega_e, V, mode: Mode, p: WLParams):
    """Wheel traction force [N]; identically zero in the stop mode."""
    if mode.gamma == 0:
        return np.zeros_like(np.asarray(V, dtype=float) * np.asarray(omega_e, dtype=float))
    tp = pump_torque(omega_e, V, mode, p)
    return np.sign(mode.gamma) * p.eta_gb * abs(mode.gamma) * tp * p.torque_scale / p.R_w


def hydraulic_flow(omega_boom, p: WLParams):
    """Cylinder volume flow for boom rate omega (piston speed ~ r1*omega)."""
    return p.n_lc * p.A_lc * p.r1 * np.asarray(omega_boom, dtype=float)


def engine_load_power(x_norm, u_norm, mode: Mode, p: WLParams):
    """Total engine load power [W]: lift + steering + traction."""
    x = np.asarray(x_norm, dtype=float) * p.xs
    omega_e = x[..., IX_OMEGA_E]
    omega_boom = x[..., IX_OMEGA]
    V = x[..., IX_V]
    u_p = x[..., IX_UP]
    u_s = x[..., IX_US]

    p_lift = np.maximum(0.0, hydraulic_flow(omega_boom, p) * u_p / p.eta_lift)
    p_steer = p.C_st * u_s ** 2
    if mode.gamma == 0:
        p_trac = np.zeros_like(p_lift)
    else:
        tp = pump_torque(omega_e, V, mode, p)
        p_trac = omega_e * p.omega_scale * tp * p.torque_scale
    return p_lift + p_steer + p_trac


def turning_radius(delta, p: WLParams):
    """Bicycle-model turning radius L / tan(delta); +inf on straight line."""
    delta = np.asarray(delta, dtype=float)
    if np.any(np.abs(delta) >= p.delta_max):
        raise SteeringLimitError(f"|steering angle| reached limit {p.delta_max} rad")
    with np.errstate(divide="ignore"):
        return p.L / np.tan(delta)


def _validate_state(x, p: WLParams):
    omega_e = x[..., IX_OMEGA_E]
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("state contains non-finite entries")
    if np.any(omega_e < p.omega_e_min) or np.any(omega_e > p.omega_e_max):
        raise EngineStallError(
            f"normalized engine speed outside [{p.omega_e_min}, {p.omega_e_max}]"
        )
    delta = x[..., IX_DELTA] * p.xs[IX_DELTA]
    if np.any(np.abs(delta) >= p.delta_max):
        raise SteeringLimitError(f"|steering angle| reached limit {p.delta_max} rad")


def physical_state_derivative(x_phys, u_phys, mode: Mode, p: WLParams, w: EngineWeights):
    """Time derivative of the physical-unit state vector."""
    x = np.asarray(x_phys, dtype=float)
    u = np.asarray(u_phys, dtype=float)
    omega_e = x[..., IX_OMEGA_E]
    p_im = x[..., IX_P_IM]
    theta = x[..., IX_THETA]
    omega = x[..., IX_OMEGA]
    V = x[..., IX_V]
    beta = x[..., IX_BETA]
    delta = x[..., IX_DELTA]
    u_p = x[..., IX_UP]
    u_s = x[..., IX_US]

    taup = w.tau_p(omega_e)
    if np.any(taup <= 0.0):
        raise EngineStallError("manifold time constant tau_p is not positive")

    te = predict_torque(w.w_te, omega_e, p_im, u[..., 2])
    x_norm = x / p.xs
    p_load = engine_load_power(x_norm, None, mode, p)
    # fuel enters the load only through torque; subtract in normalized power units
    d_omega_e = (te - p_load / p.power_scale) / p.J_e
    d_p_im = (w.p_stat(omega_e, u[..., 2]) - p_im) / taup

    t_cyl, t_buc, t_arm = lift_torques(theta, u_p, p)
    d_omega = (t_cyl - t_buc - t_arm) / p.I_boom

    f_w = traction_force(omega_e, V, mode, p)
    d_v = (f_w - np.sign(V) * (u[..., 3] + p.F_roll)) / p.M_tot
    d_x = V * np.cos(beta)
    d_y = V * np.sin(beta)
    d_beta = V * np.tan(delta) / p.L

    out = np.empty_like(x)
    out[..., IX_OMEGA_E] = d_omega_e
    out[..., IX_P_IM] = d_p_im
    out[..., IX_THETA] = omega
    out[..., IX_OMEGA] = d_omega
    out[..., IX_X] = d_x
    out[..., IX_Y] = d_y
    out[..., IX_V] = d_v
    out[..., IX_BETA] = d_beta
    out[..., IX_DELTA] = u_s
    out[..., IX_UP] = u[..., 0]
    out[..., IX_US] = u[..., 1]
    return out


def state_derivative(x, u, mode: Mode, p: WLParams, w: EngineWeights):
    """Normalized state derivative: f(Xs*x, Us*u) / Xs, per the scale rule."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _validate_state(x, p)
    return physical_state_derivative(x * p.xs, u * p.us, mode, p, w) / p.xs


def drift_and_input(x, mode: Mode, p: WLParams, w: EngineWeights):
    """Control-affine split of the normalized dynamics: xdot = f(x) + g(x) u.

    g is assembled analytically; f is the derivative at u = 0.
    """
    x = np.asarray(x, dtype=float)
    zero_u = np.zeros(x.shape[:-1] + (N_CONTROLS,))
    f = state_derivative(x, zero_u, mode, p, w)

    xs, us = p.xs, p.us
    g = np.zeros(x.shape[:-1] + (N_STATES, N_CONTROLS))
    omega_e = x[..., IX_OMEGA_E] * xs[IX_OMEGA_E]
    taup = w.tau_p(omega_e)
    g[..., IX_UP, 0] = us[0] / xs[IX_UP]
    g[..., IX_US, 1] = us[1] / xs[IX_US]
    g[..., IX_OMEGA_E, 2] = (w.w_te[3] / p.J_e) * us[2] / xs[IX_OMEGA_E]
    g[..., IX_P_IM, 2] = (w.a2 / taup) * us[2] / xs[IX_P_IM]
    v_sign = np.sign(x[..., IX_V] * xs[IX_V])
    g[..., IX_V, 3] = -v_sign / p.M_tot * us[3] / xs[IX_V]
    return f, g


def project_step(x_prev, x_new, mode: Mode, p: WLParams):
    """Post-step event handling, applied by every integrator.

    Boom and steering end stops: the boom rests on mechanical stops at its
    range ends (the decided geometry is open-loop unstable, so without stops
    any long rollout leaves the valid range); the articulation joint has
    stops just inside the steering guard. Velocity capture: in the stop mode
    a sign change of V within one step means the vehicle came to rest; static
    friction then holds it exactly at zero, consistent with sign(0) = 0 in
    the force balance.
    """
    x = np.array(x_new, dtype=float)
    xs = p.xs
    lo = p.theta_min / xs[IX_THETA]
    hi = p.theta_max / xs[IX_THETA]
    theta = x[..., IX_THETA]
    below = theta <= lo        # penetrating or resting on the stop
    above = theta >= hi
    if np.any(below):
        x[..., IX_THETA] = np.where(below, lo, x[..., IX_THETA])
        x[..., IX_OMEGA] = np.where(below, np.maximum(x[..., IX_OMEGA], 0.0), x[..., IX_OMEGA])
    if np.any(above):
        x[..., IX_THETA] = np.where(above, hi, x[..., IX_THETA])
        x[..., IX_OMEGA] = np.where(above, np.minimum(x[..., IX_OMEGA], 0.0), x[..., IX_OMEGA])

    d_stop = 0.95 * p.delta_max / xs[IX_DELTA]
    delta = x[..., IX_DELTA]
    d_hi = delta >= d_stop
    d_lo = delta <= -d_stop
    if np.any(d_hi):
        x[..., IX_DELTA] = np.where(d_hi, d_stop, x[..., IX_DELTA])
        x[..., IX_US] = np.where(d_hi, np.minimum(x[..., IX_US], 0.0), x[..., IX_US])
    if np.any(d_lo):
        x[..., IX_DELTA] = np.where(d_lo, -d_stop, x[..., IX_DELTA])
        x[..., IX_US] = np.where(d_lo, np.maximum(x[..., IX_US], 0.0), x[..., IX_US])

    if mode.gamma == 0:
        v_prev = np.asarray(x_prev, dtype=float)[..., IX_V]
        stopped = v_prev * x[..., IX_V] < 0.0
        if np.any(stopped):
            x[..., IX_V] = np.where(stopped, 0.0, x[..., IX_V])
    return x


def euler_step(f, x, dt):
    """One explicit Euler step of dx/dt = f(x)."""
    return x + dt * f(x)


def rk4_step(f, x, dt):
    """One classical Runge-Kutta step of dx/dt = f(x)."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_euler(x, u, mode: Mode, dt, p: WLParams, w: EngineWeights):
    """One Euler step of the normalized plant, with event projection."""
    if dt < 0.0:
        raise InvalidArgumentError("dt must be nonnegative")
    x = np.asarray(x, dtype=float)
    x_new = x + dt * state_derivative(x, u, mode, p, w)
    return project_step(x, x_new, mode, p)


def step_rk4(x, u, mode: Mode, dt, p: WLParams, w: EngineWeights):
    """One RK4 step of the normalized plant, with event projection."""
    if dt < 0.0:
        raise InvalidArgumentError("dt must be nonnegative")
    x = np.asarray(x, dtype=float)
    x_new = rk4_step(lambda y: state_derivative(y, u, mode, p, w), x, dt)
    return project_step(x, x_new, mode, p)


def _rollout(stepper, x0, u_schedule, mode_schedule, dt, steps, p, w):
    if dt <= 0.0 or steps < 0:
        raise InvalidArgumentError("dt must be positive and steps nonnegative")
    x = np.asarray(x0, dtype=float).copy()
    t = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, N_STATES))
    controls = np.empty((steps, N_CONTROLS))
    modes = np.empty(steps, dtype=int)
    states[0] = x
    done = 0
    try:
        for k in range(steps):
            tk = k * dt
            u = np.asarray(u_schedule(tk), dtype=float)
            mode = mode_schedule(tk)
            x = stepper(x, u, mode, dt, p, w)
            states[k + 1] = x
            controls[k] = u
            modes[k] = mode.gamma
            done = k + 1
    except WloptError as exc:
        partial = Trajectory(
            t=t[: done + 1],
            states=states[: done + 1],
            controls=controls[:done],
            modes=modes[:done],
            stage_costs=np.zeros(done),
        )
        raise SimulationAbortedError(exc, partial) from exc
    return Trajectory(
        t=t,
        states=states,
        controls=controls,
        modes=modes,
        stage_costs=np.zeros(steps),
    )


def integrate_euler(x0, u_schedule, mode_schedule, dt, steps, p: WLParams, w: EngineWeights) -> Trajectory:
    """Fixed-step Euler rollout; u_schedule and mode_schedule are callables of
    real time evaluated at the start of each step."""
    return _rollout(step_euler, x0, u_schedule, mode_schedule, dt, steps, p, w)


def integrate_rk4(x0, u_schedule, mode_schedule, dt, steps, p: WLParams, w: EngineWeights) -> Trajectory:
    """Fixed-step classical Runge-Kutta rollout (reference integrator)."""
    return _rollout(step_rk4, x0, u_schedule, mode_schedule, dt, steps, p, w)


class WheelLoaderDynamics:
    """Adapter exposing the plant as a control-affine switched system over
    normalized states, for the transform and training machinery."""

    n_states = N_STATES
    n_controls = N_CONTROLS

    def __init__(self, params: WLParams, weights: EngineWeights):
        weights.validate_operating_range(params.omega_e_min, params.omega_e_max)
        self.params = params
        self.weights = weights

    def drift_input(self, x, mode: Mode):
        return drift_and_input(x, mode, self.params, self.weights)

    def project_step(self, x_prev, x_new, mode: Mode):
        return project_step(x_prev, x_new, mode, self.params)
