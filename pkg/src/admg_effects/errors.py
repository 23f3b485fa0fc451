"""Exception types shared across the package."""


class AdmgError(Exception):
    """Base class for all package errors."""


class InputError(AdmgError, ValueError):
    """Malformed input: unknown vertex, bad file syntax, inconsistent sets."""


class StructuralError(AdmgError):
    """A graph violates a structural invariant (e.g. a directed cycle)."""


class PreconditionError(AdmgError):
    """An operation was called on a graph that does not satisfy its criterion.

    ``witness`` carries whatever evidence explains the failure (a vertex set,
    a district, a pair of vertices).
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NotIdentifiableError(AdmgError):
    """The requested effect is not identified from the observed margin."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class PositivityError(AdmgError, ArithmeticError):
    """A denominator vanished while evaluating an exact functional."""


class FitError(AdmgError):
    """A nuisance model could not be fit (e.g. singular design)."""
