"""Exception types shared across the package."""


class PtrAccountantError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(PtrAccountantError, ValueError):
    """A scale, probability or count is outside its admissible range."""


class DomainError(PtrAccountantError, ValueError):
    """A Renyi order or delta is outside the domain of a formula."""


class ConfigurationError(PtrAccountantError, ValueError):
    """A PTR configuration violates a structural requirement of a bound."""


class BoundNotApplicableError(PtrAccountantError):
    """The validity conditions of an amplification bound do not hold."""


class UnsupportedAuditError(PtrAccountantError):
    """The empirical audit cannot handle the requested scenario."""


class QuadratureError(PtrAccountantError, ArithmeticError):
    """Numerical integration failed to reach the requested accuracy."""
