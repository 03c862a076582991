from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .integrators import Trajectory


class ResonantCglError(Exception):
    pass


class LatticeMismatchError(ResonantCglError):
    pass


class TableFormatError(ResonantCglError):
    pass


class ConfigurationError(ResonantCglError):
    pass


class ResourceBoundError(ResonantCglError):
    def __init__(self, message: str, estimated: int) -> None:
        super().__init__(f"{message} (estimated count: {estimated})")
        self.estimated = estimated


class NumericalAbort(ResonantCglError):
    """Raised when an integration leaves the regime where its result is meaningful.

    `trajectory` holds every checkpoint reached before the failure, so callers can still
    persist the last good state.
    """

    def __init__(self, message: str, trajectory: Optional["Trajectory"] = None) -> None:
        super().__init__(message)
        self.trajectory = trajectory
