"""Backward-in-time costate network training, policy extraction and the
switching-time sweep.

The network for step k maps the current state to the NEXT costate evaluated
at the propagated optimal state:

    lambda_hat_{k+1}(t1, x_{k+1}) = W_k' phi(t1, x_k)

which is exactly the quantity the one-step optimal policy needs,

    u_k = -(R delta_hat Delta_v)^{-1} g_v(x_k)' lambda_hat_{k+1},

so the policy is explicit once the network is trained. Training runs backward
over the hat-time grid: at each step a batch of (t1, x) samples is drawn, the
control is resolved by a short fixed-point iteration against the next step's
costate, targets follow the adjoint recursion

    lambda_k(x) = Q delta_hat Delta_v (x - r_k) + J_k' lambda_{k+1}(x_{k+1}),

and W_k is fit by ridge least squares. J_k is the step Jacobian by central
finite differences with the resolved control held fixed (the control term of
the recursion drops by the stationarity of the policy).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .errors import (
    ConditioningError,
    DegeneratePhaseError,
    InvalidArgumentError,
    SimulationAbortedError,
    TrainingDivergedError,
    WloptError,
)
from .trajectory import Trajectory
from .transform import (
    CostWeights,
    HatGrid,
    ModeSchedule,
    SwitchedDynamics,
    hat_to_time,
    stage_cost,
    terminal_cost,
)


class PolynomialBasis:
    """Total-degree monomials over (t1, x), constant term first."""

    def __init__(self, n_states: int, degree: int = 2):
        if degree < 1:
            raise InvalidArgumentError("basis degree must be >= 1")
        self.n_states = int(n_states)
        self.degree = int(degree)
        self.n_inputs = self.n_states + 1
        self.exponents = [()]
        for d in range(1, self.degree + 1):
            self.exponents.extend(combinations_with_replacement(range(self.n_inputs), d))
        self.m_lambda = len(self.exponents)

    def evaluate(self, t1, x) -> np.ndarray:
        """phi(t1, x) for a batch: x (..., n), t1 scalar or matching batch."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t1 = np.broadcast_to(np.asarray(t1, dtype=float), x.shape[:-1])
        z = np.concatenate([t1[..., None], x], axis=-1)
        out = np.ones(x.shape[:-1] + (self.m_lambda,))
        for col, expt in enumerate(self.exponents):
            for idx in expt:
                out[..., col] *= z[..., idx]
        return out

    def descriptor(self) -> dict:
        return {"n_states": self.n_states, "degree": self.degree, "m_lambda": self.m_lambda}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "PolynomialBasis":
        basis = cls(desc["n_states"], desc["degree"])
        if basis.m_lambda != desc.get("m_lambda", basis.m_lambda):
            raise InvalidArgumentError("basis descriptor is inconsistent")
        return basis


@dataclass(frozen=True)
class TrainingConfig:
    """Sampling domain and regression settings for the backward training."""

    domain_lo: np.ndarray
    domain_hi: np.ndarray
    t1_lo: float | None = None
    t1_hi: float | None = None
    batch_size: int = 500
    inner_iterations: int = 3
    inner_tol: float = 1e-8
    ridge_lambda: float = 1e-8
    seed: int = 0
    fd_step: float = 1e-6
    basis_degree: int = 2
    cond_limit: float = 1e12
    jac_clip: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "domain_lo", np.asarray(self.domain_lo, dtype=float))
        object.__setattr__(self, "domain_hi", np.asarray(self.domain_hi, dtype=float))
        if self.domain_lo.shape != self.domain_hi.shape:
            raise InvalidArgumentError("domain bounds must have matching shapes")
        if np.any(self.domain_hi < self.domain_lo):
            raise InvalidArgumentError("domain upper bounds must not be below lower bounds")
        if self.ridge_lambda < 0.0:
            raise InvalidArgumentError("ridge_lambda must be nonnegative")
        if self.batch_size < 1 or self.inner_iterations < 1:
            raise InvalidArgumentError("batch_size and inner_iterations must be >= 1")

    def t1_interval(self, sched: ModeSchedule) -> tuple[float, float]:
        lo, hi = self.t1_lo, self.t1_hi
        if lo is None:
            lo = sched.t0 + 0.05 * (sched.tf - sched.t0)
        if hi is None:
            hi = sched.tf - 0.05 * (sched.tf - sched.t0)
        if not (sched.t0 <= lo <= hi <= sched.tf):
            raise InvalidArgumentError("t1 interval must lie inside [t0, tf]")
        return float(lo), float(hi)


@dataclass
class SwitchedTrackingProblem:
    """Bundle of the pieces the training and simulation loops need.

    The first switching instant of the schedule template is the free
    parameter; any further switch times stay fixed at their template values.
    """

    dynamics: SwitchedDynamics
    template: ModeSchedule
    grid: HatGrid
    cost: CostWeights
    control_lo: np.ndarray | None = None
    control_hi: np.ndarray | None = None

    def __post_init__(self):
        if self.grid.phase_count != self.template.phase_count:
            raise InvalidArgumentError("grid and schedule phase counts differ")
        if self.template.phase_count < 2:
            raise InvalidArgumentError("need at least one switching for the t1 parametrization")
        self._r_bar_inv = np.linalg.inv(self.cost.R_bar)
        if (self.control_lo is None) != (self.control_hi is None):
            raise InvalidArgumentError("control bounds must be given as a pair")
        if self.control_lo is not None:
            self.control_lo = np.asarray(self.control_lo, dtype=float)
            self.control_hi = np.asarray(self.control_hi, dtype=float)
            if np.any(self.control_hi < self.control_lo):
                raise InvalidArgumentError("control upper bounds below lower bounds")

    @property
    def n_states(self) -> int:
        return self.dynamics.n_states

    @property
    def n_controls(self) -> int:
        return self.dynamics.n_controls

    def schedule_for(self, t1: float) -> ModeSchedule:
        times = list(self.template.switch_times)
        times[0] = float(t1)
        return self.template.with_switch_times(times)

    def phase_length(self, i: int, t1):
        """Length of phase i as a function of the free switching time."""
        t1 = np.asarray(t1, dtype=float)
        b = self.template.boundaries
        if i == 0:
            return t1 - b[0]
        if i == 1:
            return b[2] - t1
        return b[i + 1] - b[i]

    def step_time(self, k_hat: int, t1):
        """Real time of grid step k_hat given the free switching time."""
        t1 = np.asarray(t1, dtype=float)
        th = k_hat * self.grid.delta_hat
        i = int(self.grid.phase_of_step(k_hat))
        b = self.template.boundaries
        start = t1 if i == 1 else b[i]
        out = start + self.phase_length(i, t1) * (th - i)
        return out if np.ndim(out) else float(out)

    def r_bar_inv(self) -> np.ndarray:
        return self._r_bar_inv


def terminal_costate(x, r, S):
    """Gradient of the terminal cost: 2 S (x - r)."""
    e = np.asarray(x, dtype=float) - np.asarray(r, dtype=float)
    return 2.0 * e @ np.atleast_2d(np.asarray(S, dtype=float)).T


@dataclass
class TrainingReport:
    rms_residual: np.ndarray
    frobenius_norm: np.ndarray


@dataclass
class CostateNetwork:
    """Per-step costate weight matrices over a shared polynomial basis."""

    basis: PolynomialBasis
    grid: HatGrid
    template: ModeSchedule
    weights: list
    t1_range: tuple
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    report: TrainingReport | None = None

    def __post_init__(self):
        if len(self.weights) != self.grid.n_prime:
            raise InvalidArgumentError("need one weight matrix per grid step")

    def weight(self, k_hat: int) -> np.ndarray:
        if not 0 <= k_hat < self.grid.n_prime:
            raise InvalidArgumentError(f"step index outside [0, {self.grid.n_prime})")
        W = self.weights[k_hat]
        if W is None:
            raise InvalidArgumentError(f"network weights at step {k_hat} are not trained")
        return W

    def save(self, path):
        payload = {
            "basis": self.basis.descriptor(),
            "delta_hat": self.grid.delta_hat,
            "n_prime": self.grid.n_prime,
            "phase_count": self.grid.phase_count,
            "t1_range": list(self.t1_range),
            "domain_lo": [float(v) for v in self.domain_lo],
            "domain_hi": [float(v) for v in self.domain_hi],
            "weights": [np.asarray(W).tolist() for W in self.weights],
            "training_report": {
                "rms_residual": [float(v) for v in self.report.rms_residual],
                "frobenius_norm": [float(v) for v in self.report.frobenius_norm],
            }
            if self.report is not None
            else None,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, template: ModeSchedule) -> "CostateNetwork":
        payload = json.loads(Path(path).read_text())
        basis = PolynomialBasis.from_descriptor(payload["basis"])
        grid = HatGrid(delta_hat=payload["delta_hat"], phase_count=payload["phase_count"])
        report = None
        if payload.get("training_report"):
            report = TrainingReport(
                rms_residual=np.array(payload["training_report"]["rms_residual"]),
                frobenius_norm=np.array(payload["training_report"]["frobenius_norm"]),
            )
        return cls(
            basis=basis,
            grid=grid,
            template=template,
            weights=[np.array(W) for W in payload["weights"]],
            t1_range=tuple(payload["t1_range"]),
            domain_lo=np.array(payload["domain_lo"]),
            domain_hi=np.array(payload["domain_hi"]),
            report=report,
        )


def _saturated_basis(net: CostateNetwork, t1, x) -> np.ndarray:
    """Basis evaluation with inputs saturated slightly beyond the training
    box. Outside that region the polynomial fit is meaningless and grows
    without bound, which otherwise feeds back into the policy and destabilizes
    the backward recursion (the usual fitted-value-iteration failure mode)."""
    width = net.domain_hi - net.domain_lo
    lo = net.domain_lo - 0.1 * width
    hi = net.domain_hi + 0.1 * width
    return net.basis.evaluate(t1, np.clip(x, lo, hi))


def evaluate_costate(net: CostateNetwork, k_hat: int, t1, x) -> np.ndarray:
    """lambda_hat_{k+1}(t1, x_{k+1}) = W_k' phi(t1, x_k): the network maps the
    current state to the next costate."""
    phi = _saturated_basis(net, t1, x)
    out = phi @ net.weight(k_hat)
    return out if np.asarray(x).ndim > 1 else out[0]


def _batch_step(problem: SwitchedTrackingProblem, X, U, k_hat: int, t1s):
    """Vectorized hat-grid Euler step with per-sample switching times."""
    i = int(problem.grid.phase_of_step(k_hat))
    mode = problem.template.mode_of_phase(i)
    f, g = problem.dynamics.drift_input(X, mode)
    dl = problem.phase_length(i, t1s)
    mult = np.asarray(dl * problem.grid.delta_hat)[..., None]
    X_new = X + (f + np.einsum("...ij,...j->...i", g, U)) * mult
    project = getattr(problem.dynamics, "project_step", None)
    if project is not None:
        X_new = project(X, X_new, mode)
    return X_new


def _policy_from_costate(problem: SwitchedTrackingProblem, k_hat: int, t1s, X, lam,
                         r_bar_inv) -> np.ndarray:
    """u = -(R_bar dt Delta)^{-1} (g_bar Delta dt)' lambda = -R_bar^{-1} g_bar' lambda.

    The phase-length factors of R_v and the discretized input matrix cancel;
    on a zero-length phase the policy is undefined and forced to zero.
    """
    i = int(problem.grid.phase_of_step(k_hat))
    _, g = problem.dynamics.drift_input(X, problem.template.mode_of_phase(i))
    gt_lam = np.einsum("...ij,...i->...j", g, lam)
    dl = np.asarray(problem.phase_length(i, t1s), dtype=float)
    active = (dl > 0.0).astype(float)
    u = -(gt_lam @ r_bar_inv.T) * active[..., None]
    if problem.control_lo is not None:
        # for diagonal R_bar the channel-wise box clamp is the exact
        # constrained minimizer of the one-step control problem
        u = np.clip(u, problem.control_lo, problem.control_hi)
    return u


def _costate_at(net: CostateNetwork, problem: SwitchedTrackingProblem, j: int, Y, t1s,
                fd_step: float = 1e-6, jac_clip: float = 10.0) -> np.ndarray:
    """lambda_j evaluated at states Y (vectorized, per-sample t1).

    j == N' returns the terminal costate; otherwise the adjoint recursion is
    evaluated with the trained network j supplying lambda_{j+1}(x_{j+1}) and
    the step Jacobian taken at the fixed network policy. Jacobian entries are
    clipped to +-jac_clip: the dynamics contain jumps (sign of the speed, end
    stops), and a central difference straddling a jump is O(1/h) while every
    true branch Jacobian entry of the one-step map is O(1).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    t1s = np.broadcast_to(np.asarray(t1s, dtype=float), Y.shape[:-1])
    grid, cost = problem.grid, problem.cost
    if j == grid.n_prime:
        r_N = cost.r_at(problem.template.tf)
        return terminal_costate(Y, r_N, cost.S)

    lam_next = _saturated_basis(net, t1s, Y) @ net.weight(j)
    U = _policy_from_costate(problem, j, t1s, Y, lam_next, problem.r_bar_inv())

    n = problem.n_states
    M = Y.shape[0]
    h = fd_step
    eye = np.eye(n)
    Yp = (Y[None, :, :] + h * eye[:, None, :]).reshape(n * M, n)
    Ym = (Y[None, :, :] - h * eye[:, None, :]).reshape(n * M, n)
    t1_rep = np.tile(t1s, n)
    U_rep = np.tile(U, (n, 1))
    Fp = _batch_step(problem, Yp, U_rep, j, t1_rep).reshape(n, M, n)
    Fm = _batch_step(problem, Ym, U_rep, j, t1_rep).reshape(n, M, n)
    Jt = (Fp - Fm) / (2.0 * h)  # Jt[d, m, :] = d(step)/d(x_d) -> J^T stacked
    np.clip(Jt, -jac_clip, jac_clip, out=Jt)

    jt_lam = np.einsum("dmi,mi->md", Jt, lam_next)

    i = int(grid.phase_of_step(j))
    mult = np.asarray(problem.phase_length(i, t1s) * grid.delta_hat)
    r_j = cost.r_at(problem.step_time(j, t1s))
    q_term = ((Y - r_j) @ cost.Q_bar.T) * mult[..., None]
    return q_term + jt_lam


def costate_target(net: CostateNetwork, problem: SwitchedTrackingProblem, k_hat: int,
                   t1, x, fd_step: float = 1e-6, jac_clip: float = 10.0) -> np.ndarray:
    """lambda_{k_hat} at state x via the adjoint recursion (weights for the
    costates past k_hat must already be trained)."""
    out = _costate_at(net, problem, k_hat, x, t1, fd_step=fd_step, jac_clip=jac_clip)
    return out if np.asarray(x).ndim > 1 else out[0]


def policy(net: CostateNetwork, problem: SwitchedTrackingProblem, k_hat: int, t1, x) -> np.ndarray:
    """Optimal control from the trained costate: -(R_v)^{-1} g_v' lambda_hat.

    On a zero-length active phase the policy is undefined; the control is
    forced to zero there.
    """
    x_arr = np.atleast_2d(np.asarray(x, dtype=float))
    t1s = np.broadcast_to(np.asarray(t1, dtype=float), x_arr.shape[:-1])
    lam = _saturated_basis(net, t1s, x_arr) @ net.weight(k_hat)
    u = _policy_from_costate(problem, k_hat, t1s, x_arr, lam, problem.r_bar_inv())
    return u if np.asarray(x).ndim > 1 else u[0]


def train_backward(problem: SwitchedTrackingProblem, cfg: TrainingConfig) -> CostateNetwork:
    """Backward sweep over the hat grid fitting one weight matrix per step."""
    n = problem.n_states
    if cfg.domain_lo.shape != (n,):
        raise InvalidArgumentError(f"training domain must have {n} dimensions")
    basis = PolynomialBasis(n, cfg.basis_degree)
    if cfg.batch_size < basis.m_lambda:
        raise InvalidArgumentError(
            f"batch_size {cfg.batch_size} is below the basis size {basis.m_lambda}"
        )
    grid = problem.grid
    n_prime = grid.n_prime
    t1_lo, t1_hi = cfg.t1_interval(problem.template)

    rng = np.random.default_rng(cfg.seed)
    net = CostateNetwork(
        basis=basis,
        grid=grid,
        template=problem.template,
        weights=[None] * n_prime,
        t1_range=(t1_lo, t1_hi),
        domain_lo=cfg.domain_lo,
        domain_hi=cfg.domain_hi,
        report=None,
    )
    rms = np.zeros(n_prime)
    frob = np.zeros(n_prime)
    ridge = cfg.ridge_lambda * np.eye(basis.m_lambda)
    r_bar_inv = problem.r_bar_inv()

    for k in range(n_prime - 1, -1, -1):
        t1s = rng.uniform(t1_lo, t1_hi, cfg.batch_size)
        X = rng.uniform(cfg.domain_lo, cfg.domain_hi, (cfg.batch_size, n))
        U = np.zeros((cfg.batch_size, problem.n_controls))
        for _ in range(cfg.inner_iterations):
            Y = _batch_step(problem, X, U, k, t1s)
            lam = _costate_at(net, problem, k + 1, Y, t1s, fd_step=cfg.fd_step,
                              jac_clip=cfg.jac_clip)
            U_new = _policy_from_costate(problem, k, t1s, X, lam, r_bar_inv)
            done = np.max(np.abs(U_new - U)) < cfg.inner_tol
            U = U_new
            if done:
                break
        Y = _batch_step(problem, X, U, k, t1s)
        targets = _costate_at(net, problem, k + 1, Y, t1s, fd_step=cfg.fd_step,
                              jac_clip=cfg.jac_clip)
        if not np.all(np.isfinite(targets)):
            raise TrainingDivergedError(k, "costate target evaluation")

        Phi = basis.evaluate(t1s, X)
        G = Phi.T @ Phi + ridge
        eig = np.linalg.eigvalsh(G)
        cond = float(eig[-1] / max(eig[0], 1e-300))
        if cond > cfg.cond_limit:
            raise ConditioningError(k, cond)
        W = np.linalg.solve(G, Phi.T @ targets)
        net.weights[k] = W
        resid = Phi @ W - targets
        rms[k] = float(np.sqrt(np.mean(resid ** 2)))
        frob[k] = float(np.linalg.norm(W))

    net.report = TrainingReport(rms_residual=rms, frobenius_norm=frob)
    return net


def _mode_key(mode) -> int:
    return int(getattr(mode, "gamma", mode))


def closed_loop_simulate(net: CostateNetwork, problem: SwitchedTrackingProblem,
                         x0, t1: float) -> Trajectory:
    """Roll the discretized dynamics forward under the trained policy."""
    sched = problem.schedule_for(t1)
    if t1 < sched.t0 or t1 > sched.tf:
        raise InvalidArgumentError("t1 must lie inside [t0, tf]")
    if t1 == sched.t0 or t1 == sched.tf:
        raise DegeneratePhaseError("closed-loop rollout needs strictly positive phase lengths")
    grid, cost = problem.grid, problem.cost
    n_prime = grid.n_prime
    x = np.asarray(x0, dtype=float).copy()

    times = np.empty(n_prime + 1)
    states = np.empty((n_prime + 1, problem.n_states))
    controls = np.empty((n_prime, problem.n_controls))
    costates = np.empty((n_prime, problem.n_states))
    modes = np.empty(n_prime, dtype=int)
    stage = np.empty(n_prime)

    states[0] = x
    times[0] = sched.t0
    k_done = 0
    try:
        for k in range(n_prime):
            u = policy(net, problem, k, t1, x)
            lam = evaluate_costate(net, k, t1, x)
            stage[k] = stage_cost(x, u, k, sched, grid, cost)
            controls[k] = u
            costates[k] = lam
            modes[k] = _mode_key(sched.mode_of_phase(int(grid.phase_of_step(k))))
            x = _batch_step(problem, x[None, :], u[None, :], k, np.asarray(t1))[0]
            states[k + 1] = x
            times[k + 1] = hat_to_time((k + 1) * grid.delta_hat, sched)
            k_done = k + 1
    except WloptError as exc:
        partial = Trajectory(
            t=times[: k_done + 1],
            states=states[: k_done + 1],
            controls=controls[:k_done],
            modes=modes[:k_done],
            stage_costs=stage[:k_done],
        )
        raise SimulationAbortedError(exc, partial) from exc

    r_N = cost.r_at(sched.tf)
    total = float(np.sum(stage) + terminal_cost(states[-1], r_N, cost.S))
    return Trajectory(
        t=times,
        states=states,
        controls=controls,
        modes=modes,
        stage_costs=stage,
        total_cost=total,
        costates=costates,
        k_hat=np.arange(n_prime + 1),
    )


@dataclass
class SweepResult:
    t1_star: float
    j_star: float
    candidates: np.ndarray
    costs: np.ndarray


def sweep_switching_times(net: CostateNetwork, problem: SwitchedTrackingProblem, x0,
                          candidates=None, num_candidates: int = 101) -> SweepResult:
    """Evaluate the closed-loop cost along candidate switching times and pick
    the minimizer (ties resolve to the smallest t1)."""
    if candidates is None:
        lo, hi = net.t1_range
        candidates = np.linspace(lo, hi, num_candidates)
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise InvalidArgumentError("candidate grid is empty")
    costs = np.empty(len(candidates))
    for idx, t1 in enumerate(candidates):
        costs[idx] = closed_loop_simulate(net, problem, x0, float(t1)).total_cost
    j_min = float(np.min(costs))
    best = int(np.argmax(costs <= j_min + 1e-12))
    return SweepResult(
        t1_star=float(candidates[best]),
        j_star=float(costs[best]),
        candidates=candidates,
        costs=costs,
    )
