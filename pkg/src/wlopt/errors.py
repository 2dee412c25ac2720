"""Exception hierarchy.

Everything raised on purpose derives from WloptError so the CLI can map
failures to exit codes: ConfigError -> 2, anything else -> 1.
"""


class WloptError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(WloptError):
    """Bad configuration, missing file, malformed input."""


class InvalidArgumentError(WloptError, ValueError):
    """Argument violates a documented precondition."""


class SingularSystemError(WloptError):
    """Rank-deficient regression; carries the name of the deficient column."""

    def __init__(self, column: str):
        super().__init__(f"regressor matrix is rank deficient in column '{column}'")
        self.column = column


class TrainingDivergedError(WloptError):
    """Loss or target became non-finite; carries the step where it happened."""

    def __init__(self, where: int, what: str = "training"):
        super().__init__(f"{what} diverged at step {where}")
        self.where = where


class EngineStallError(WloptError):
    """Normalized engine speed left the guarded operating range."""


class SteeringLimitError(WloptError):
    """Steering angle magnitude reached the articulation limit."""


class BoomRangeError(WloptError):
    """Boom angle left the geometric operating range."""


class DegeneratePhaseError(WloptError):
    """Operation undefined on a zero-length phase."""


class AmbiguousInverseError(WloptError):
    """Real time instant lies inside a zero-length phase."""


class GridMismatchError(WloptError):
    """Trajectory and grid/schedule shapes are inconsistent."""


class ConditioningError(WloptError):
    """Regression too ill-conditioned even after ridge regularization."""

    def __init__(self, k_hat: int, cond: float):
        super().__init__(
            f"costate regression at step {k_hat} is ill-conditioned (cond={cond:.3e})"
        )
        self.k_hat = k_hat
        self.cond = cond


class SimulationAbortedError(WloptError):
    """Rollout hit a plant guard; carries the partial trajectory."""

    def __init__(self, cause: WloptError, partial):
        super().__init__(f"simulation aborted: {cause}")
        self.cause = cause
        self.partial = partial
