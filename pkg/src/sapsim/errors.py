"""Exception types raised across the package."""


class SapSimError(Exception):
    """Base class for all errors raised by sapsim."""


class InvalidInputError(SapSimError, ValueError):
    """A state or parameter failed validation (non-finite values, bad sizes)."""


class InvalidMaterialError(InvalidInputError):
    """Contact material parameters are out of range."""


class DegenerateGeometryError(SapSimError):
    """A contact normal cannot be defined (e.g. concentric spheres)."""


class FreeMotionError(SapSimError):
    """The Newton solve for the free-motion velocities did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class LineSearchError(SapSimError):
    """Backtracking line search exhausted its shrink budget."""


class FactorizationError(SapSimError):
    """A Cholesky pivot was not positive."""


class ScenarioError(SapSimError):
    """A scenario file could not be parsed or validated."""


class SolverDivergenceError(SapSimError):
    """The contact solve produced non-finite values."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
