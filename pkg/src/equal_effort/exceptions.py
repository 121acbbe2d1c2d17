"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`EqualEffortError`, so callers (and the CLI) can catch one type.
"""


class EqualEffortError(Exception):
    """Base class for all package errors."""


class SchemaError(EqualEffortError, ValueError):
    """Schema is inconsistent, or a data source does not match it."""


class MappingError(EqualEffortError, ValueError):
    """A raw category value has no code in the value maps."""

    def __init__(self, message, row=None, column=None, value=None):
        super().__init__(message)
        self.row = row
        self.column = column
        self.value = value


class DegeneratePartitionError(EqualEffortError):
    """One side of the protected-attribute split is empty."""


class InsufficientComparatorsError(EqualEffortError):
    """Situation testing found too few matched records on a side."""


class SingularDesignError(EqualEffortError, ValueError):
    """Least-squares design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class EmptySubgroupError(EqualEffortError, ValueError):
    """An expectation was requested over zero records."""


class NonMonotoneModelError(EqualEffortError, ValueError):
    """The averaged treatment slope is not positive, so no closed-form inverse exists."""


class MissingLevelError(EqualEffortError, ValueError):
    """A treatment level needed for a fit is absent from the data."""


class EmptyCellError(EqualEffortError, ValueError):
    """No records at the target treatment level for a weighted estimate."""


class GraphCycleError(EqualEffortError, ValueError):
    """The supplied causal graph contains a directed cycle."""

    def __init__(self, message, cycle=()):
        super().__init__(message)
        self.cycle = list(cycle)


class IdentifiabilityError(EqualEffortError, ValueError):
    """The conditioning set contains a descendant of the treatment."""


class ZeroProbabilityError(EqualEffortError, ValueError):
    """The conditioning event has probability zero under the model."""


class OptimizationError(EqualEffortError, RuntimeError):
    """The penalized fit could not keep the slope barrier satisfied."""


class ConfigError(EqualEffortError, ValueError):
    """A run configuration is missing keys or has out-of-range values."""
