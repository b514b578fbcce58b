"""Exception types raised across the package."""


class LpEndsError(Exception):
    """Base class for all package errors."""


class InvalidWarp(LpEndsError):
    pass


class NotTemperate(LpEndsError):
    pass


class GridTooCoarse(LpEndsError):
    pass


class InvalidMode(LpEndsError):
    pass


class DomainError(LpEndsError, ValueError):
    pass


class EigenFailure(LpEndsError):
    def __init__(self, mode, message="eigendecomposition did not converge"):
        super().__init__(f"{message} (mode {mode})")
        self.mode = mode


class AdmissibilityError(LpEndsError):
    pass


class InvalidIndex(LpEndsError):
    pass


class NoParent(LpEndsError):
    pass


class OutOfDomain(LpEndsError):
    pass


class ResolutionError(LpEndsError):
    def __init__(self, message, required_size=None):
        super().__init__(message)
        self.required_size = required_size


class PreconditionError(LpEndsError):
    pass


class ConfigError(LpEndsError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
