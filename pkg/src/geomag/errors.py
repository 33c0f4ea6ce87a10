"""Exception hierarchy shared by all modules."""


class GeomagError(Exception):
    """Base class for every error raised by the package."""


class DomainError(GeomagError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class PrecisionError(GeomagError):
    """A quadrature rule or truncation is too coarse for the request."""


class DegenerateBasisError(GeomagError):
    """A projection matrix that has to be inverted is singular."""


class MeshError(GeomagError):
    """Invalid or degenerate surface mesh."""


class MeshParseError(MeshError):
    pass


class OpenSurfaceError(MeshError):
    pass


class ResonanceError(GeomagError):
    """Resolvent requested at (or numerically next to) an NP eigenvalue."""

    def __init__(self, message, nearest_eigenvalue=None):
        super().__init__(message)
        self.nearest_eigenvalue = nearest_eigenvalue


class AccuracyError(GeomagError):
    """Evaluation point too close to a surface for the far-field rule."""


class SingularityError(GeomagError):
    """Kernel or field evaluated at its source point."""


class GeometryError(GeomagError):
    """Measurement geometry incompatible with the scene."""


class ProximityError(GeometryError):
    """Evaluation point violates the small-inclusion separation."""


class CoverageError(GeomagError):
    """Samples do not cover the full measurement sphere."""


class DegenerateBackgroundError(GeomagError):
    pass


class InconsistentEpochsError(GeomagError):
    pass


class ZeroWeightError(GeomagError):
    pass


class DegenerateGeometryError(GeomagError):
    pass


class OutOfRangeError(GeomagError, ValueError):
    pass


class AnisotropyMismatchError(GeomagError):
    pass


class OptimizationError(GeomagError):
    """Nonlinear fit did not converge; carries the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class GeomagWarning(UserWarning):
    """Base class for warnings issued by the package."""


class ValidityWarning(GeomagWarning):
    """A model hypothesis is violated; results may be unreliable."""


class IdentifiabilityWarning(GeomagWarning):
    """Fitted anomalies are not uniquely determined by the data."""


class ModelMismatchWarning(GeomagWarning):
    """Data are inconsistent with the exterior dipole model."""
