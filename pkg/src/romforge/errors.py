"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for argument/shape problems; the classes here
cover failure modes that callers (and the command line) need to tell apart.
"""


class RomforgeError(Exception):
    """Base class for toolkit-specific failures."""


class DataError(RomforgeError):
    """Input data violates an invariant (non-finite entries, bad layout)."""


class DegenerateSpectrumError(DataError):
    """Singular-value spectrum unusable (e.g. all zeros)."""


class IllConditionedKernelError(RomforgeError):
    """Kernel matrix stayed indefinite after the full jitter ladder."""


class ConvergenceError(RomforgeError):
    """Iterative solver failed to reach its residual tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class TrainingError(RomforgeError):
    """Network training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(RomforgeError):
    """File on disk does not match the expected binary/CSV layout."""
