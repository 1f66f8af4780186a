"""Exception types raised across the package."""


class ParameterError(ValueError):
    """A parameter lies outside its physical or mathematical domain."""


class NotSuperPoissonianError(ValueError):
    """Moment fit of a multi-mode thermal law requested on data with variance <= mean."""


class UndefinedStatisticError(ValueError):
    """A statistic cannot be evaluated (empty class, zero shot-noise level, too few samples)."""


class CalibrationError(RuntimeError):
    """Pulse-height spectrum did not yield enough resolved peaks."""


class ConfigError(ValueError):
    """Experiment configuration is malformed or inconsistent."""
