"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class SKCError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SKCError):
    """Malformed or unusable input data."""


class ConfigError(SKCError):
    """Invalid run configuration."""


class NumericalError(SKCError):
    """A numerical routine failed (non-PD matrix, non-finite values, ...)."""


class CholeskyError(NumericalError):
    def __init__(self, message, min_eig=None, jitter=None):
        super().__init__(message)
        self.min_eig = min_eig
        self.jitter = jitter


class KernelDimensionError(SKCError, ValueError):
    """A base kernel references an input dimension the data does not have."""

    def __init__(self, kernel, ndim):
        super().__init__(
            f"base kernel {kernel} uses dimension {kernel.dim} but inputs "
            f"have only {ndim} dimension(s)"
        )
        self.kernel = kernel
        self.ndim = ndim


class SpectralTruncationError(NumericalError):
    def __init__(self, message, mass):
        super().__init__(message)
        self.mass = mass
