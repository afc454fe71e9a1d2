"""Exception hierarchy shared by the library and the command line."""


class SublsqError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SublsqError, ValueError):
    """Invalid parameters or inconsistent configuration (CLI exit 2)."""


class DimensionError(ConfigurationError):
    """Subproblem shape outside the method (e.g. fewer rows than unknowns)."""


class DomainError(ConfigurationError):
    """A formula was evaluated outside the range where it is defined."""


class EvaluationError(SublsqError, ArithmeticError):
    """A basis function or the target returned a non-finite value."""

    def __init__(self, message, point=None, function_index=None):
        super().__init__(message)
        self.point = point
        self.function_index = function_index


class RankDeficiencyError(SublsqError, ArithmeticError):
    """The normal matrix of a full least-squares solve is numerically singular."""

    def __init__(self, message, smallest_eigenvalue):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class ThresholdTooHighError(SublsqError, RuntimeError):
    """The attempt budget ran out before enough draws passed the threshold."""

    def __init__(self, message, attempted, accepted):
        super().__init__(message)
        self.attempted = attempted
        self.accepted = accepted

    @property
    def acceptance_rate(self):
        return self.accepted / self.attempted if self.attempted else 0.0


class GridError(SublsqError, ValueError):
    """A grid point violates the clearance radius around a site."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class GeometryError(SublsqError, RuntimeError):
    """Shell-grid rejection sampling is too inefficient for the requested geometry."""


class FitError(SublsqError, ValueError):
    """A distribution fit cannot be performed (e.g. all samples equal)."""


class ParseError(SublsqError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class VerificationFailure(SublsqError):
    """A statistical conformance check rejected a bound (CLI exit 3)."""
