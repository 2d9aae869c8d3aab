"""Exception types shared across the package."""


class UsageError(ValueError):
    """Bad arguments: wrong dimension, out-of-range parameter, missing data."""


class ScheduleError(ValueError):
    """A stepsize schedule produced an invalid (nonpositive or non-finite) value."""


class ModelError(ValueError):
    """An invalid noise model, MDP, or other model description."""


class IntegrationError(ArithmeticError):
    """An ODE integration produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class CapExceeded(RuntimeError):
    """A first-crossing search ran past its iteration cap or the recorded span."""
