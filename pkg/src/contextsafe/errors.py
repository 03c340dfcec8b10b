"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A matrix factorization failed even after jitter escalation.

    Carries the final jitter value that was tried so callers can report
    how ill-conditioned the system was.
    """

    def __init__(self, message, jitter=0.0):
        super().__init__(message)
        self.jitter = jitter


class ConfigError(ValueError):
    """An experiment configuration is missing, malformed, or inconsistent."""
