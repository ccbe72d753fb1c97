"""Exception hierarchy shared by all modules."""


class WprojError(Exception):
    """Base class for every error raised by the package."""


class InvalidDimension(WprojError, ValueError):
    pass


class DataParseError(WprojError, ValueError):
    """A CSV cell could not be parsed; carries the offending position."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class InnerNonconvergence(WprojError, RuntimeError):
    """The per-sample transport subproblem failed to converge."""

    def __init__(self, message, index=None, last_iterate=None):
        super().__init__(message)
        self.index = index
        self.last_iterate = last_iterate


class UnboundedInner(WprojError, RuntimeError):
    pass


class SingularVn(WprojError, ValueError):
    pass


class SingularWn(WprojError, ValueError):
    pass


class MissingDerivatives(WprojError, ValueError):
    pass


class MissingL(WprojError, ValueError):
    pass


class InfeasibleOracle(WprojError, ValueError):
    pass


class ElUndefined(WprojError, ValueError):
    """Zero is not strictly inside the convex hull of the moment values."""


class InvalidMoments(WprojError, ValueError):
    pass


class ConfigError(WprojError, ValueError):
    pass
