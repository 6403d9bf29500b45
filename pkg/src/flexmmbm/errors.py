"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`MmbmError`,
so callers (the CLI in particular) can separate analytic failures from bugs.
"""


class MmbmError(Exception):
    """Base class for all library errors."""


class InvalidInputError(MmbmError, ValueError):
    """Malformed or non-finite numerical input."""


class InvalidParamsError(InvalidInputError):
    """Model parameters violate an invariant (generator rows, sigma > 0, ...)."""


class ReducibleGeneratorError(InvalidParamsError):
    """The phase generator is not irreducible."""


class DomainError(MmbmError, ValueError):
    """A level argument lies outside the strip [0, b]."""


class BranchMismatchError(MmbmError):
    """The caller asked for the nonsingular branch of a singular matrix."""


class NumericalFailureError(MmbmError):
    """A linear system is numerically rank deficient beyond what theory allows."""


class SolverFailureError(NumericalFailureError):
    """The quadratic matrix equation solver could not produce a valid split."""


class InconsistentClassificationError(NumericalFailureError):
    """Drift classified as nonzero but the passage system is singular."""


class ConvergenceError(NumericalFailureError):
    """An iterative solver did not converge."""


class UnsupportedCaseError(MmbmError):
    """Known theoretical gap, e.g. sojourn matrices at zero mean drift."""


class AssumptionViolationError(MmbmError):
    """A structural assumption (irreducibility of the switching chain) fails."""
