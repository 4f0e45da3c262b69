"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or shape; ``key`` names the offending path when known."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DomainError(ValueError):
    pass


class FitDomainError(DomainError):
    pass


class SingularityError(ValueError):
    pass


class UnreachableLinkError(RuntimeError):
    pass


class SequencingError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


class ActionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class TrainingError(RuntimeError):
    pass
