"""Exception and warning types shared across the package."""


class GcmcError(Exception):
    """Base class for errors raised by this package."""


class DomainError(GcmcError, ValueError):
    """A state or parameter lies outside the model's support."""


class ConfigError(GcmcError, ValueError):
    """An algorithm or model configuration failed validation.

    The message names the offending field.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnsupportedOperationError(GcmcError, NotImplementedError):
    """The requested operation has no implementation for this model."""


class WeightDegeneracyError(GcmcError, RuntimeError):
    """All particle weights are zero (or the total weight underflowed)."""


class DegeneracyWarning(UserWarning):
    """A computation hit a degenerate configuration but has a defined result."""


class ScheduleWarning(UserWarning):
    """The adaptive regularisation schedule fell back to a heuristic step."""
