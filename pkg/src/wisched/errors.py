"""Exception types shared across the package.

Every failure mode that callers are expected to catch gets its own class so tests
can assert on the type rather than on message text.
"""


class WischedError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(WischedError):
    """Malformed or inconsistent configuration input (file or object)."""


class ConstraintViolationError(WischedError):
    """A channel that is still reserved (b_m > 0) was assigned a device."""


class TruncationError(WischedError):
    """Stationary-distribution tail beyond the truncation point is too heavy."""


class ThresholdCapError(WischedError):
    """Threshold search hit its cap; the argmin may lie beyond it."""


class IndexSearchError(WischedError):
    """Index grid search exhausted [c_low, c_high] without finding a crossing."""


class NumericalFloorError(WischedError):
    """A sampled action's probability underflowed to zero."""


class CorruptBufferError(WischedError):
    """A replay buffer entry is unusable (e.g. stored probability <= 0)."""


class NonFiniteLossError(WischedError):
    """The surrogate loss or one of its terms evaluated to NaN or inf."""


class ConvergenceError(WischedError):
    """An iterative solver exceeded its iteration budget."""


class StateSpaceError(WischedError):
    """An enumerated MDP would exceed the configured state-count limit."""
