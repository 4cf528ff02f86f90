"""Exception types shared across the package."""


class SddeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SddeError):
    """Invalid arguments, configuration values, or problem/scheme pairing."""


class HistoryUnderflowError(SddeError):
    """A delayed lookup reached back before the available history."""


class StageSolveError(SddeError):
    """The implicit stage equation did not converge.

    The last residual norm (per path) is attached when available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(StageSolveError):
    """Iterates became non-finite during the implicit stage solve."""


class NotApplicableError(SddeError):
    """A requested analytic quantity is undefined for the given constants."""
