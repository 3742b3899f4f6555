"""Exception hierarchy shared by all geoalpha modules."""


class GeoAlphaError(Exception):
    """Base class for every error raised by the package."""


class InvalidInput(GeoAlphaError, ValueError):
    """Inputs are malformed, non-finite or outside an operation's domain."""


class DegenerateNormal(GeoAlphaError, ValueError):
    """The implicit-surface gradient vanishes, so no unit normal exists."""


class OffManifold(GeoAlphaError, ValueError):
    """A point is farther from the surface than the configured tolerance."""


class AntipodalPoints(GeoAlphaError, ValueError):
    """Sphere log map requested between antipodal points."""


class DegenerateInput(GeoAlphaError, ValueError):
    """Data carries no information about the requested quantity."""


class IllConditioned(GeoAlphaError, ValueError):
    """A fit is numerically unidentifiable."""


class MinWindow(GeoAlphaError, ValueError):
    """Fewer samples than the minimum window an operation needs."""


class SingularFit(GeoAlphaError, ValueError):
    """Least-squares design matrix is rank deficient."""


class ScaleCapExceeded(GeoAlphaError, MemoryError):
    """Vietoris-Rips complex would exceed the configured size guard."""


class IllConditionedKernel(GeoAlphaError, ValueError):
    """GP kernel matrix stays indefinite after jitter escalation."""


class IngestError(GeoAlphaError, ValueError):
    """Price panel failed validation while loading."""


class ConvergenceFailure(GeoAlphaError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    The last (or best) iterate is kept on ``best`` so callers can decide
    whether it is still usable.
    """

    def __init__(self, message, best=None, n_iter=None):
        super().__init__(message)
        self.best = best
        self.n_iter = n_iter


class NumericalBlowup(GeoAlphaError, FloatingPointError):
    """A simulated path produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
