"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: :class:`InfeasibleError` -> 3,
:class:`NumericalDegeneracyError` -> 4.
"""


class LdpcError(Exception):
    """Base class for library errors."""


class InfeasibleError(LdpcError):
    """A requested configuration cannot be satisfied (calibration, overflow guards, bounds)."""


class NumericalDegeneracyError(LdpcError):
    """A closed-form quantity degenerated (zero scale, underflowed normalizer)."""


class StateSpaceTooLargeError(InfeasibleError):
    """Exhaustive enumeration was requested over too many states."""
