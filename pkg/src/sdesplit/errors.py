"""Exception hierarchy shared by all modules."""


class SdeSplitError(Exception):
    """Base class for all package errors."""


class RejectedInputError(SdeSplitError, ValueError):
    """Arguments violate a documented precondition (shape, sign, range)."""


class DomainError(RejectedInputError):
    """A coefficient function was evaluated outside its domain (v <= -1)."""


class SingularityError(SdeSplitError, ArithmeticError):
    """A scheme hit a singular coefficient; carries the offending state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DivergenceError(SdeSplitError, ArithmeticError):
    """Non-finite intermediate values; ``sweep`` names the fixpoint sweep."""

    def __init__(self, message, sweep=None, state=None):
        super().__init__(message)
        self.sweep = sweep
        self.state = state


class UnsupportedConfigurationError(RejectedInputError):
    """The scheme has no formula for the requested configuration."""


class ConfigurationError(SdeSplitError, ValueError):
    """Experiment configuration is invalid or self-inconsistent."""
