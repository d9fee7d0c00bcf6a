"""Exceptions raised by the discovery toolkit.

Management commands map these onto exit codes: configuration and dimension
problems are usage errors (2), numerical blow-ups are divergence (3) and
dataset/file problems are I/O errors (4).
"""


class KineticError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(KineticError, ValueError):
    """An invalid size, option or configuration value."""


class DimensionError(KineticError, ValueError):
    """A field does not match the grid it is applied on."""


class ConstructionError(KineticError, ValueError):
    """Operator expressions that cannot be combined."""


class InstabilityError(KineticError, ArithmeticError):
    """The forward solver or a staged residual produced NaN/Inf."""

    def __init__(self, message, dt=None, epsilon=None):
        super().__init__(message)
        self.dt = dt
        self.epsilon = epsilon


class ScaleError(KineticError, ArithmeticError):
    """ε_pred fell below the usable range."""


class AnsatzOverflowError(KineticError, ArithmeticError):
    """The ansatz evaluated to a non-finite value at a given scale."""

    def __init__(self, message, scale=None):
        super().__init__(message)
        self.scale = scale


class DivergenceError(KineticError, ArithmeticError):
    """Training produced a non-finite loss or gradient.

    Attributes:
        path (str): Name of the first offending parameter, if known.
        last_finite_state (dict): Parameter state from the last finite
            iteration, suitable for ``AnsatzModel.load_state_dict``.
    """

    def __init__(self, message, path=None, last_finite_state=None):
        super().__init__(message)
        self.path = path
        self.last_finite_state = last_finite_state


class DatasetFormatError(KineticError, ValueError):
    """A dataset file has the wrong magic or version."""


class CorruptDatasetError(DatasetFormatError):
    """A dataset file is truncated or its sizes are inconsistent."""


class EmptyModelError(KineticError, ValueError):
    """Sparse regression thresholded away every column."""


class UndefinedMetricError(KineticError, ValueError):
    """An error metric was requested against an all-zero exact table."""
