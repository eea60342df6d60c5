"""Exception hierarchy shared by all modules."""


class HomogviError(Exception):
    """Base class for errors raised by this package."""


class ExprError(HomogviError, ValueError):
    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class ValidationError(HomogviError, ValueError):
    """Input data violates a structural hypothesis (symmetry, ellipticity, ...)."""


class MeshError(HomogviError, ValueError):
    pass


class SolverError(HomogviError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``iterate`` holds the last (or best) iterate and ``residual`` the final
    residual measure, so callers can inspect how close it got.
    """

    def __init__(self, message, iterate=None, residual=None, **info):
        self.iterate = iterate
        self.residual = residual
        self.info = info
        super().__init__(message)


class MeanValueError(HomogviError, RuntimeError):
    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(f"{message}; trace={self.trace}")


class BudgetError(HomogviError, RuntimeError):
    pass


class ResolutionError(HomogviError, ValueError):
    """The fine mesh does not resolve the fastest oscillation scale."""


class ConfigError(HomogviError, ValueError):
    pass
