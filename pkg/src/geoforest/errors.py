"""Exception types shared across the package."""


class GeoForestError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GeoForestError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(GeoForestError):
    """A file on disk is malformed (bad header, wrong payload size, ...)."""


class AnnotationError(GeoForestError):
    """A seed annotation violates its invariants (too few vertices, self
    intersection, empty raster, slice out of bounds)."""


class ModelError(GeoForestError):
    """A forest model file is unusable or incompatible with the data."""


class DatasetError(GeoForestError):
    """A dataset-level problem: missing ground truth, bad manifest."""


class CaseError(GeoForestError):
    """A single case cannot be processed; message carries the case id."""
