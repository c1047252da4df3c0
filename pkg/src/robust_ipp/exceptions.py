class InvalidParameterError(ValueError):
    """A hyperparameter or configuration value is outside its valid domain."""


class NumericalFailure(ArithmeticError):
    """Covariance factorization failed even after jitter escalation."""

    def __init__(self, message, jitter=None, epoch=None):
        super().__init__(message)
        self.jitter = jitter
        self.epoch = epoch


class GridParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class PlanningFailure(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
