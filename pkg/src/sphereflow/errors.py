"""Exception types shared across the package."""


class SphereFlowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SphereFlowError, ValueError):
    """Invalid domain, parameter, scheme or run configuration."""


class DegenerateFieldError(SphereFlowError, ArithmeticError):
    """A norm in a denominator vanished (the field has numerically died out)."""


class StabilityError(SphereFlowError, ArithmeticError):
    """A linear solve is singular or a step produced non-finite values."""


class OracleFailure(SphereFlowError):
    """The shooting oracle could not bracket or resolve the ground state."""


class StepSizeFailure(SphereFlowError):
    """Backtracking exhausted without decreasing the objective."""


class CheckpointError(SphereFlowError):
    """A checkpoint or snapshot file could not be parsed."""
