"""Exception hierarchy shared across the package."""


class CarsFitError(Exception):
    """Base class for all package errors."""


class DomainError(CarsFitError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class DegenerateLibraryError(CarsFitError, ValueError):
    """A library cannot support the requested computation (duplicates, zero spread, ...)."""


class IllConditionedError(CarsFitError, ArithmeticError):
    """The kernel matrix is too ill-conditioned to solve reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class FormatError(CarsFitError, ValueError):
    """A persisted file is malformed."""


class VersionError(FormatError):
    """A persisted file declares a schema version this code does not understand."""
