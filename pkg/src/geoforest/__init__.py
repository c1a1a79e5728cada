"""Semi-automatic 3D kidney segmentation.

A user outlines each kidney on a single mid slice; intensity-weighted
geodesic distance volumes seeded by those outlines join the CT intensities
as extra channels for a random-forest voxel classifier built on box
features over integral volumes.
"""

from geoforest.errors import (
    AnnotationError,
    CaseError,
    DatasetError,
    FormatError,
    GeoForestError,
    ModelError,
    ParameterError,
)
from geoforest.volume import ChannelKind, ChannelStack, LabelVolume, Volume3

__all__ = [
    "AnnotationError",
    "CaseError",
    "ChannelKind",
    "ChannelStack",
    "DatasetError",
    "FormatError",
    "GeoForestError",
    "LabelVolume",
    "ModelError",
    "ParameterError",
    "Volume3",
]

__version__ = "0.1.0"
