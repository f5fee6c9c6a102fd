"""Exception hierarchy shared by every subsystem."""


class LearnCodesError(Exception):
    """Base class for all errors raised by learncodes."""


class ConfigurationError(LearnCodesError, ValueError):
    """A spec, config or shape combination is invalid."""


class InputError(LearnCodesError, ValueError):
    """Data handed to an operation violates its preconditions."""


class UsageError(LearnCodesError, RuntimeError):
    """An API was called in the wrong order or state."""


class DegenerateEncoderError(LearnCodesError, ArithmeticError):
    """Power normalization saw a zero-variance position (collapsed code)."""


class DivergenceError(LearnCodesError, RuntimeError):
    """Training produced a non-finite or exploding loss.

    ``history`` holds the partial training history when available and
    ``batch_seed`` the seed tuple of the offending batch.
    """

    def __init__(self, message, history=None, batch_seed=None):
        super().__init__(message)
        self.history = history
        self.batch_seed = batch_seed
