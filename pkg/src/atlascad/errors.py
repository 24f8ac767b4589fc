"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps each family onto an exit code, so new exceptions should
subclass the most specific family that applies.
"""


class AtlasCadError(Exception):
    """Base class for all errors raised by this package."""


# -- configuration / usage (exit code 2) ------------------------------------

class ConfigError(AtlasCadError, ValueError):
    """Invalid configuration or precondition violation."""


class TreeError(ConfigError):
    """Logical tree construction failed (e.g. duplicate diagnosis)."""


class BundleError(ConfigError):
    """A case bundle lacks the feature vector a node needs."""


class SizeGuardError(ConfigError):
    """Problem size exceeds a hard guard (oracle n, permutation N)."""


class FoldError(ConfigError):
    """Cross-validation folds cannot be formed or are degenerate."""


# -- data problems (exit code 3) ---------------------------------------------

class DataError(AtlasCadError, ValueError):
    """Input data is malformed or violates an invariant."""


class VolumeFormatError(DataError):
    """MVOL header is malformed."""


class TruncationError(DataError):
    """MVOL payload length disagrees with the declared dims."""


class GridError(DataError):
    """Two volumes that must share a grid do not."""


class ShapeError(DataError):
    """Query vector dimension does not match the model."""


class DegenerateDataError(DataError):
    """Training data cannot define the requested model (e.g. one class)."""


class SchemaMismatchError(DataError):
    """Feature schema of the input differs from the model's schema."""


class EmptyMatrixError(DataError, ZeroDivisionError):
    """Accuracy requested on a confusion matrix with zero total."""


# -- numerical (exit code 4) -------------------------------------------------

class ConvergenceError(AtlasCadError, RuntimeError):
    """Solver hit its iteration budget; ``model`` holds the best iterate."""

    def __init__(self, message, model=None, gap=None):
        super().__init__(message)
        self.model = model
        self.gap = gap
