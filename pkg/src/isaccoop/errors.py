"""Exception types raised across the package."""


class GeometryError(ValueError):
    """Degenerate input geometry (zero-length segment, coincident points)."""


class MeasurementError(ValueError):
    """A path measurement that cannot be inverted (e.g. non-positive TOA)."""


class NoScattererError(LookupError):
    """No mapped scatterer is hit along a measured arrival bearing."""


class InfeasibleGeometryError(ValueError):
    """Measurements are inconsistent with the mapped geometry."""


class DegenerateFusionError(ValueError):
    """Information matrix could not be inverted during fusion."""


class FrameMismatchError(ValueError):
    """Two radio maps are expressed in different coordinate frames."""


class FeatureNotFoundError(KeyError):
    """Unknown virtual-anchor id."""


class MapFormatError(ValueError):
    """Malformed map file."""


class ConfigError(ValueError):
    """Invalid scenario configuration. ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
