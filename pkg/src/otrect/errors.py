"""Exception hierarchy shared by every module.

The CLI maps :class:`InputError` (and its subclasses) to exit code 2 and
:class:`VerificationError` to exit code 1.
"""


class OTRectError(Exception):
    """Base class for all errors raised by this package."""


class InputError(OTRectError, ValueError):
    """Malformed or inconsistent user input."""


class DomainError(InputError):
    """A point lies outside the declared working box."""


class UnsupportedOperationError(OTRectError):
    """The requested operation is not available for this object."""


class DegenerateInputError(InputError):
    """Too few points or pairs for the requested check."""


class DegeneracyError(OTRectError):
    """The mixed Hessian is singular at the requested point."""


class VerificationError(OTRectError):
    """A certificate or optimality check failed."""


class SolverFailure(VerificationError):
    """The transport solver did not terminate with a certified optimum."""


class CertificationFailure(VerificationError):
    """No dual potentials certify the given plan as optimal."""


class ConsistencyError(VerificationError):
    """Sample data contradicts a graph structure (e.g. duplicate u, distinct v)."""


class SkipSample(OTRectError):
    """A local estimate is not well posed at this sample; skip it."""
