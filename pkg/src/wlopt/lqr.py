"""Exact backward dynamic programming for switched linear-quadratic tracking.

Independent oracle for the costate-network training: value functions are
affine-quadratic, V_k(x) = 0.5 x'P_k x + p_k'x + c_k, computed by explicit
backward recursion with the same cost convention as the transform module
(stage costs carry the 1/2, the terminal cost does not).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class LqrSolution:
    """Per-step quadratic value pieces and affine feedback gains.

    lambda_k(x) = P[k] x + p[k];  u_k(x) = -(K[k] x + d[k]);
    V_k(x) = 0.5 x'P[k]x + p[k]'x + c[k].
    """

    A: list
    B: list
    Q: list
    R: list
    P: list
    p: list
    c: list
    K: list
    d: list
    r: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.K)

    def costate(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.P[k].T + self.p[k]

    def control(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return -(x @ self.K[k].T + self.d[k])

    def optimal_cost(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        return float(0.5 * x0 @ self.P[0] @ x0 + self.p[0] @ x0 + self.c[0])

    def simulate(self, x0):
        """Closed-loop rollout; returns (states, controls, cost)."""
        x = np.asarray(x0, dtype=float).copy()
        xs, us = [x.copy()], []
        cost = 0.0
        for k in range(self.n_steps):
            u = self.control(k, x)
            e = x - self.r[k]
            cost += 0.5 * (e @ self.Q[k] @ e + u @ self.R[k] @ u)
            x = self.A[k] @ x + self.B[k] @ u
            xs.append(x.copy())
            us.append(u)
        eN = x - self.r[self.n_steps]
        # terminal written without the 1/2: captured by P_N = 2 S
        cost += 0.5 * eN @ self.P[self.n_steps] @ eN
        return np.array(xs), np.array(us), float(cost)


def _per_step(mats, N: int, switch_index: int):
    """Expand per-phase matrices (list of 1 or 2+) to per-step lists."""
    mats = [np.atleast_2d(np.asarray(M, dtype=float)) for M in mats]
    if len(mats) == 1:
        return [mats[0]] * N
    out = []
    for k in range(N):
        out.append(mats[0] if k < switch_index else mats[1])
    return out


def lqr_oracle(A_list, B_list, Q, R, S, N: int, switch_index: int, r=None) -> LqrSolution:
    """Backward Riccati-style recursion for a one-switching discrete system.

    A_list/B_list/Q/R hold per-phase matrices (a single matrix means both
    phases share it); steps k < switch_index use the first phase. Cost is
    sum_k 0.5[(x_k-r_k)'Q_k(x_k-r_k) + u_k'R_k u_k] + (x_N-r_N)'S(x_N-r_N).
    """
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    A = _per_step(A_list, N, switch_index)
    B = []
    for M in (B_list if isinstance(B_list, (list, tuple)) else [B_list]):
        M = np.asarray(M, dtype=float)
        B.append(M.reshape(M.shape[0], -1))
    B = _per_step(B, N, switch_index)
    Qs = _per_step(Q if isinstance(Q, (list, tuple)) else [Q], N, switch_index)
    Rs = _per_step(R if isinstance(R, (list, tuple)) else [R], N, switch_index)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = A[0].shape[0]
    if r is None:
        r = np.zeros((N + 1, n))
    r = np.asarray(r, dtype=float)
    if r.shape != (N + 1, n):
        raise InvalidArgumentError(f"reference must have shape ({N + 1}, {n})")
    for Rk in Rs:
        if np.min(np.linalg.eigvalsh(Rk)) <= 0.0:
            raise InvalidArgumentError("R must be positive definite")

    P = [None] * (N + 1)
    p = [None] * (N + 1)
    c = [None] * (N + 1)
    K = [None] * N
    d = [None] * N
    P[N] = 2.0 * S
    p[N] = -2.0 * S @ r[N]
    c[N] = float(r[N] @ S @ r[N])
    for k in range(N - 1, -1, -1):
        Ak, Bk, Qk, Rk = A[k], B[k], Qs[k], Rs[k]
        Pn, pn, cn = P[k + 1], p[k + 1], c[k + 1]
        M = Rk + Bk.T @ Pn @ Bk
        Minv = np.linalg.inv(M)
        K[k] = Minv @ Bk.T @ Pn @ Ak
        d[k] = Minv @ Bk.T @ pn
        F = Ak - Bk @ K[k]
        h = -Bk @ d[k]
        Pk = Qk + K[k].T @ Rk @ K[k] + F.T @ Pn @ F
        P[k] = 0.5 * (Pk + Pk.T)
        p[k] = -Qk @ r[k] + K[k].T @ Rk @ d[k] + F.T @ (Pn @ h + pn)
        c[k] = float(
            0.5 * r[k] @ Qk @ r[k]
            + 0.5 * d[k] @ Rk @ d[k]
            + 0.5 * h @ Pn @ h
            + pn @ h
            + cn
        )
    return LqrSolution(A=A, B=B, Q=Qs, R=Rs, P=P, p=p, c=c, K=K, d=d, r=r)
