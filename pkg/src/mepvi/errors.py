"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InitializationError(RuntimeError):
    """The component fit could not start from a finite objective."""


class EstimatorDegenerateError(ArithmeticError):
    """A Monte Carlo estimator produced a value it cannot be used with."""


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message: str, theta=None, step=None):
        super().__init__(message)
        self.theta = theta
        self.step = step
