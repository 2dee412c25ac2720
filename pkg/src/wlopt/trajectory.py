"""Time-indexed rollout record with CSV round-trip."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class Trajectory:
    """States x_0..x_N, controls u_0..u_{N-1}, per-step stage costs and the
    total (stage sum + terminal) cost. `modes` holds the gear ratio active on
    each step; `costates` (optional) the evaluated next-step costates."""

    t: np.ndarray                 # (N+1,) real time at each state sample
    states: np.ndarray            # (N+1, n)
    controls: np.ndarray          # (N, m)
    modes: np.ndarray             # (N,) int gear ratios
    stage_costs: np.ndarray       # (N,)
    total_cost: float = float("nan")
    costates: np.ndarray | None = None
    k_hat: np.ndarray | None = None

    def __post_init__(self):
        n_steps = len(self.controls)
        if len(self.states) != n_steps + 1 or len(self.t) != n_steps + 1:
            raise InvalidArgumentError("trajectory arrays have inconsistent lengths")
        if len(self.stage_costs) != n_steps or len(self.modes) != n_steps:
            raise InvalidArgumentError("trajectory arrays have inconsistent lengths")

    @property
    def n_steps(self) -> int:
        return len(self.controls)

    def accumulated_stage_cost(self) -> float:
        return float(np.sum(self.stage_costs))

    def to_csv(self, path):
        """Header t,x1..x11,u1..u4,mode,stage_cost; the final row carries the
        terminal state with empty control/mode/stage fields."""
        n = self.states.shape[1]
        m = self.controls.shape[1]
        header = (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"u{j + 1}" for j in range(m)]
            + ["mode", "stage_cost"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(self.n_steps):
                writer.writerow(
                    [f"{self.t[k]:.17g}"]
                    + [f"{v:.17g}" for v in self.states[k]]
                    + [f"{v:.17g}" for v in self.controls[k]]
                    + [str(int(self.modes[k])), f"{self.stage_costs[k]:.17g}"]
                )
            writer.writerow(
                [f"{self.t[-1]:.17g}"]
                + [f"{v:.17g}" for v in self.states[-1]]
                + [""] * m
                + ["", ""]
            )

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if not rows:
            raise InvalidArgumentError(f"empty trajectory file: {path}")
        n = sum(1 for h in header if h.startswith("x"))
        m = sum(1 for h in header if h.startswith("u"))
        body, last = rows[:-1], rows[-1]
        t = np.array([float(r[0]) for r in rows])
        states = np.array([[float(v) for v in r[1 : 1 + n]] for r in rows])
        controls = np.array([[float(v) for v in r[1 + n : 1 + n + m]] for r in body])
        controls = controls.reshape(len(body), m)
        modes = np.array([int(r[1 + n + m]) for r in body], dtype=int)
        stage = np.array([float(r[2 + n + m]) for r in body])
        return cls(t=t, states=states, controls=controls, modes=modes, stage_costs=stage)
