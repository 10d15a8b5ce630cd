"""Exception types shared across the package.

Keeping these as thin ValueError/RuntimeError subclasses lets library code
raise precise errors while callers that do not care can still catch the
builtin bases.
"""


class DimensionError(ValueError):
    """Array shapes or sizes violate an interface contract."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid range (sigma < 0, t <= 0, ...)."""


class SymbolError(ValueError):
    """A symbol vector contains entries outside the {-1, +1} alphabet."""


class ConfigError(ValueError):
    """A configuration is structurally or semantically invalid."""


class FormatError(ValueError):
    """A binary container (IDX file, operator/parameter file) is malformed."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss).

    Carries the last finite checkpoint so callers can salvage the run.
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step


class EmptyResultsError(RuntimeError):
    """A plot-data request matched no result rows at all."""
