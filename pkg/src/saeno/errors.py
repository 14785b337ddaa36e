"""Exception types raised across the package."""


class SaenoError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SaenoError, ValueError):
    pass


class NumericDivergenceError(SaenoError, ArithmeticError):
    """A non-finite value appeared during encoding or training.

    ``iteration`` is the encoder layer index, ``epoch``/``sample`` locate the
    failing training step when known.
    """

    def __init__(self, message, iteration=None, epoch=None, sample=None):
        super().__init__(message)
        self.iteration = iteration
        self.epoch = epoch
        self.sample = sample


class HypothesisViolationError(SaenoError):
    pass


class DegenerateAtomError(SaenoError, ValueError):
    def __init__(self, message, atom=None):
        super().__init__(message)
        self.atom = atom


class SingularPreconditionerError(SaenoError, ArithmeticError):
    pass


class ResourceLimitError(SaenoError, MemoryError):
    pass


class ConfigError(SaenoError):
    pass


class FormatError(SaenoError):
    """Raised when a dataset or checkpoint file cannot be decoded."""
