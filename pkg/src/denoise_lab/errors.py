"""Exception types raised across the package."""


class DenoiseLabError(Exception):
    """Base class for all package errors."""


class DimensionError(DenoiseLabError, ValueError):
    """A point or batch does not have the dimension the target expects."""


class UndefinedDensityError(DenoiseLabError, ValueError):
    """The target has no Lebesgue density (Dirac mixtures, degenerate subspaces)."""


class OutOfSupportError(DenoiseLabError, ValueError):
    """A point lies outside the support where the log density is defined."""


class QuadratureError(DenoiseLabError, RuntimeError):
    """Adaptive quadrature hit its node cap before meeting the tolerance."""


class UnsupportedError(DenoiseLabError, ValueError):
    """The requested combination of options has no defined meaning."""


class IncompatibleEstimatorError(DenoiseLabError, ValueError):
    """A distance estimator cannot be applied to the given target."""


class ConfigError(DenoiseLabError, ValueError):
    """A key-value config file is malformed or incomplete."""


class PersistError(DenoiseLabError, OSError):
    """Reading or writing a result file failed; the message names the path."""
