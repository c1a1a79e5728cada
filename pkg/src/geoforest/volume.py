"""3D volumes with physical voxel spacing, and MetaImage (.mhd/.raw) I/O.

Conventions fixed here and relied on everywhere else:

* voxel index order is (x, y, z); arrays have shape (nx, ny, nz)
* integer voxel coordinates index voxel centers; the physical position of
  voxel (i, j, k) is origin + (i, j, k) * spacing (millimeters)
* the raw payload on disk is x-fastest (MetaImage layout), i.e. Fortran
  order for our (nx, ny, nz) arrays
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from geoforest.errors import FormatError, ParameterError

logger = logging.getLogger(__name__)

Triple = tuple[int, int, int]
FTriple = tuple[float, float, float]


class ChannelKind(Enum):
    CT_HU = "ct_hu"
    GEODESIC = "geodesic"
    POSTERIOR = "posterior"
    GENERIC = "generic"


# label codes of the three-class problem
LABEL_BACKGROUND = 0
LABEL_RIGHT = 1
LABEL_LEFT = 2
N_CLASSES = 3


@dataclass(frozen=True)
class Volume3:
    """A scalar 3D grid with physical spacing. Immutable after construction."""

    data: np.ndarray  # shape (nx, ny, nz), float32
    spacing: FTriple
    origin: FTriple = (0.0, 0.0, 0.0)
    channel_kind: ChannelKind = ChannelKind.GENERIC

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 3:
            raise ParameterError(f"volume data must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ParameterError(f"all dims must be >= 1, got {arr.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ParameterError(f"spacing must be three positive floats, got {self.spacing}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> Triple:
        return self.data.shape

    def with_data(self, data: np.ndarray, kind: ChannelKind | None = None) -> "Volume3":
        return Volume3(data, self.spacing, self.origin,
                       kind if kind is not None else self.channel_kind)

    def same_grid(self, other) -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.origin == other.origin)


@dataclass(frozen=True)
class LabelVolume:
    """Per-voxel class ids: 0 background, 1 right kidney, 2 left kidney."""

    labels: np.ndarray  # shape (nx, ny, nz), uint8
    spacing: FTriple
    origin: FTriple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 3:
            raise ParameterError(f"label data must be 3D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
            raise ParameterError("labels must be in {0, 1, 2}")
        arr = arr.astype(np.uint8, copy=False)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> Triple:
        return self.labels.shape

    def same_grid(self, other) -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.origin == other.origin)

    def class_mask(self, class_id: int) -> np.ndarray:
        return self.labels == class_id


@dataclass(frozen=True)
class ChannelStack:
    """Geometrically congruent channels; channel 0 is always the CT channel."""

    channels: tuple[Volume3, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise ParameterError("a channel stack needs at least one channel")
        names = tuple(self.names) if self.names else tuple(
            f"channel{i}" for i in range(len(channels)))
        if len(names) != len(channels):
            raise ParameterError("one name per channel required")
        first = channels[0]
        if first.channel_kind is not ChannelKind.CT_HU:
            raise ParameterError("channel 0 must be the CT intensity channel")
        for i, ch in enumerate(channels[1:], start=1):
            if not first.same_grid(ch):
                raise ParameterError(
                    f"channel {i} ({names[i]}) is not congruent with channel 0: "
                    f"{ch.dims}/{ch.spacing}/{ch.origin} vs "
                    f"{first.dims}/{first.spacing}/{first.origin}")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def dims(self) -> Triple:
        return self.channels[0].dims

    @property
    def spacing(self) -> FTriple:
        return self.channels[0].spacing


# ---------------------------------------------------------------------------
# MetaImage I/O

_ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UCHAR": np.dtype("u1"),
}
_KNOWN_KEYS = {
    "ObjectType", "NDims", "DimSize", "ElementType",
    "ElementSpacing", "Offset", "ElementDataFile",
}


def _parse_mhd_header(path: str) -> dict[str, str]:
    header = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}: malformed header line {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            header[key] = value
            if key not in _KNOWN_KEYS:
                logger.warning("%s: ignoring unknown MetaImage key %r", path, key)
    return header


def _header_triple(header: dict, key: str, path: str, cast):
    if key not in header:
        raise FormatError(f"{path}: missing required header key {key!r}")
    parts = header[key].split()
    try:
        values = tuple(cast(p) for p in parts)
    except ValueError:
        raise FormatError(f"{path}: cannot parse header key {key!r}: {header[key]!r}")
    if len(values) != 3:
        raise FormatError(f"{path}: header key {key!r} needs 3 values, got {len(values)}")
    return values


def _read_mhd_array(path: str):
    header = _parse_mhd_header(path)
    if header.get("NDims", "3") != "3":
        raise FormatError(f"{path}: NDims must be 3, got {header.get('NDims')!r}")
    dims = _header_triple(header, "DimSize", path, int)
    spacing = _header_triple(header, "ElementSpacing", path, float)
    origin = (_header_triple(header, "Offset", path, float)
              if "Offset" in header else (0.0, 0.0, 0.0))
    if "ElementType" not in header:
        raise FormatError(f"{path}: missing required header key 'ElementType'")
    et = header["ElementType"]
    if et not in _ELEMENT_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {et!r}")
    dtype = _ELEMENT_TYPES[et]
    if "ElementDataFile" not in header:
        raise FormatError(f"{path}: missing required header key 'ElementDataFile'")
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)),
                            header["ElementDataFile"])
    with open(raw_path, "rb") as fh:
        raw = fh.read()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{raw_path}: raw payload size mismatch, expected {expected} bytes "
            f"for DimSize {dims}, got {len(raw)}")
    flat = np.frombuffer(raw, dtype=dtype)
    # x-fastest payload -> Fortran order for (nx, ny, nz)
    arr = flat.reshape(dims, order="F")
    return arr, spacing, origin


def read_mhd(path: str) -> Volume3:
    """Read a MetaImage volume; integer payloads are converted to float
    without rescaling."""
    arr, spacing, origin = _read_mhd_array(path)
    return Volume3(arr.astype(np.float32), spacing, origin, ChannelKind.CT_HU)


def read_label_mhd(path: str) -> LabelVolume:
    """Read a MetaImage label mask (values must be in {0, 1, 2})."""
    arr, spacing, origin = _read_mhd_array(path)
    rounded = np.rint(arr).astype(np.int64)
    if rounded.size and (rounded.min() < 0 or rounded.max() >= N_CLASSES):
        raise FormatError(f"{path}: label values outside {{0, 1, 2}}")
    return LabelVolume(rounded.astype(np.uint8), spacing, origin)


def _write_mhd_pair(path: str, payload: np.ndarray, element_type: str,
                    spacing, origin) -> None:
    base, ext = os.path.splitext(path)
    if ext.lower() != ".mhd":
        raise ParameterError(f"output path must end in .mhd, got {path!r}")
    raw_name = os.path.basename(base) + ".raw"
    nx, ny, nz = payload.shape
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        f"DimSize = {nx} {ny} {nz}",
        f"ElementType = {element_type}",
        "ElementSpacing = {} {} {}".format(*(repr(float(s)) for s in spacing)),
        "Offset = {} {} {}".format(*(repr(float(o)) for o in origin)),
        f"ElementDataFile = {raw_name}",
    ]
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(os.path.join(os.path.dirname(os.path.abspath(path)), raw_name),
                  "wb") as fh:
            fh.write(payload.tobytes(order="F"))
    except OSError as exc:
        raise FormatError(f"cannot write volume to {path}: {exc}") from exc


def write_mhd(vol: Volume3, path: str) -> None:
    """Write a volume as a float32 .mhd/.raw pair readable by read_mhd."""
    _write_mhd_pair(path, vol.data.astype(np.float32, copy=False),
                    "MET_FLOAT", vol.spacing, vol.origin)


def write_label_mhd(labels: LabelVolume, path: str) -> None:
    """Write a label mask as an 8-bit .mhd/.raw pair."""
    _write_mhd_pair(path, labels.labels, "MET_UCHAR", labels.spacing, labels.origin)


# ---------------------------------------------------------------------------

def normalize_ct(vol: Volume3, lo: float = -200.0, hi: float = 500.0) -> Volume3:
    """Window the CT intensities to [0, 1]: clamp((v - lo) / (hi - lo), 0, 1).

    The default window spans soft tissue through contrast-enhanced
    parenchyma, which makes downstream features invariant to scanner
    offsets.
    """
    if lo >= hi:
        raise ParameterError(f"window requires lo < hi, got ({lo}, {hi})")
    out = np.clip((vol.data.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return vol.with_data(out.astype(np.float32), ChannelKind.CT_HU)
