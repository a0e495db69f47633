"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InfeasibleRegion -> 3,
NumericalInconsistency -> 4.
"""


class SoschedError(Exception):
    """Base class for all package errors."""


class ConfigError(SoschedError):
    """Invalid or inconsistent experiment configuration."""


class DomainError(SoschedError):
    """An argument is outside the mathematical domain of the operation."""


class DimensionMismatch(SoschedError):
    """Operating point and channel statistics disagree on the client count."""


class TooManyClients(SoschedError):
    """Exhaustive subset enumeration refused above the size guard."""


class NumericalInconsistency(SoschedError):
    """A quantity that is nonnegative analytically came out negative."""


class InsufficientRuns(SoschedError):
    """An across-run estimator needs at least two runs."""


class EmptySamples(SoschedError):
    """An estimator was handed an empty sample list."""


class InfeasibleRegion(SoschedError):
    """The constraint region is empty (or the feasibility pre-check failed)."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations) if violations else []
