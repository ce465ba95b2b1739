"""Exception types shared across the toolkit."""


class AbfkitError(Exception):
    """Base class for all toolkit-specific errors."""


class DataAcquisitionError(AbfkitError, RuntimeError):
    """A black-box oracle returned unusable data (non-finite, malformed, dead)."""


class OutOfDomainError(AbfkitError, ValueError):
    """A state fell outside the declared state box."""


class InsufficientDataError(AbfkitError, ValueError):
    """An estimator was given too few usable samples."""


class InfeasibleError(AbfkitError, ValueError):
    """No finite sample count can meet the requested confidence."""


class LpInfeasibleError(AbfkitError, RuntimeError):
    """Coefficient constraints admit no feasible point."""


class TemplateError(AbfkitError, ValueError):
    """A candidate-function template is malformed."""


class NumericError(AbfkitError, ArithmeticError):
    """An evaluation produced a non-finite value."""


class ConfigError(AbfkitError, ValueError):
    """A run configuration is invalid or incomplete."""
