"""Exception hierarchy for geoquad."""


class GeoQuadError(Exception):
    """Base class for all package errors."""


class NotHermitian(GeoQuadError, ValueError):
    pass


class ShapeMismatch(GeoQuadError, ValueError):
    pass


class ConvergenceFailure(GeoQuadError, ArithmeticError):
    pass


class DegenerateSpectrum(GeoQuadError, ArithmeticError):
    """Raised when a target eigenvalue is not separated from its neighbours."""


class ExpansionInvalid(GeoQuadError, ValueError):
    """Raised when the perturbative parameter ``dE_Z / Omega`` is too large."""


class QuadratureFailure(GeoQuadError, ArithmeticError):
    pass


class EndpointMiss(GeoQuadError, ArithmeticError):
    """Raised when an integrated pulse misses its final boundary value."""


class InvalidT2(GeoQuadError, ValueError):
    pass


class PositivityViolation(GeoQuadError, ArithmeticError):
    pass


class ConfigError(GeoQuadError, ValueError):
    pass
