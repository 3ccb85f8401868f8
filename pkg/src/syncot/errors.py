"""Exception types shared across the package."""


class SyncotError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SyncotError):
    """Inconsistent shapes, invalid parameters, or broken invariants."""


class InputError(SyncotError):
    """Invalid problem data (e.g. mass mismatch between marginals)."""


class MassMismatchError(ConfigurationError, InputError):
    """Boundary marginals carry different total mass."""


class NumericalError(SyncotError):
    """A numerical procedure failed (NaN, divergence, impossible residual)."""


class ConvergenceError(SyncotError):
    """An iterative solver exhausted its budget; carries the final violation."""

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class DomainError(SyncotError):
    """Query outside the domain of a tabulated map."""


class FormatError(SyncotError):
    """Malformed field file or CSV artifact."""


class ParseError(SyncotError):
    """Configuration text rejected; carries a 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
