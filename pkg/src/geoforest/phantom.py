"""Synthetic CT-like phantoms with known ground truth.

Each phantom holds two ellipsoidal kidneys with bright parenchyma,
internal cyst blobs of widely varying intensity, a cluster of cyst-like
confounder blobs adjacent to the right kidney (standing in for liver
cysts, which share the intensity statistics of kidney cysts), and
additive Gaussian noise. Truth labels are exactly the generating
ellipsoids; the seed annotations are the mid-slice cross-section
boundaries.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from geoforest.errors import ParameterError
from geoforest.geodesic import TARGET_LEFT, TARGET_RIGHT, SeedAnnotation
from geoforest.volume import (
    LABEL_LEFT,
    LABEL_RIGHT,
    ChannelKind,
    LabelVolume,
    Volume3,
    write_label_mhd,
    write_mhd,
)

HU_BACKGROUND = 40.0
HU_PARENCHYMA = 120.0


@dataclass(frozen=True)
class EllipsoidSpec:
    center: tuple[float, float, float]  # voxel coordinates, integer z
    radii: tuple[float, float, float]   # voxel units


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    dims: tuple[int, int, int] = (96, 96, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 2.5)
    right: EllipsoidSpec = EllipsoidSpec((27, 48, 32), (12, 12, 11))
    left: EllipsoidSpec = EllipsoidSpec((69, 48, 32), (12, 12, 11))
    cysts_per_kidney: int = 6
    cyst_radius: tuple[float, float] = (2.0, 5.0)
    # fluid-filled cysts sit well below soft tissue, hemorrhagic ones above
    cyst_intensity_fluid: tuple[float, float] = (0.0, 15.0)
    cyst_intensity_hemorrhagic: tuple[float, float] = (70.0, 95.0)
    confounder_count: int = 3
    confounder_radius: tuple[float, float] = (3.0, 6.0)
    noise_hu: float = 5.0

    def __post_init__(self):
        gap = (self.left.center[0] - self.left.radii[0]) - \
              (self.right.center[0] + self.right.radii[0])
        if gap <= 0:
            raise ParameterError("kidney ellipsoids overlap along x")
        for kidney in (self.right, self.left):
            for axis in range(3):
                lo = kidney.center[axis] - kidney.radii[axis]
                hi = kidney.center[axis] + kidney.radii[axis]
                if lo < 0 or hi > self.dims[axis] - 1:
                    raise ParameterError(
                        f"kidney ellipsoid leaves the volume along axis {axis}")

    @classmethod
    def random(cls, seed: int) -> "PhantomSpec":
        rng = np.random.default_rng([seed, 0xC0FFEE])
        def jitter(base, spread):
            return float(base + rng.uniform(-spread, spread))
        right = EllipsoidSpec(
            (jitter(27, 3), jitter(48, 4), int(rng.integers(29, 36))),
            (jitter(12, 2), jitter(12, 2), jitter(11, 2)))
        left = EllipsoidSpec(
            (jitter(69, 3), jitter(48, 4), int(rng.integers(29, 36))),
            (jitter(12, 2), jitter(12, 2), jitter(11, 2)))
        return cls(seed=seed, right=right, left=left,
                   cysts_per_kidney=int(rng.integers(4, 9)),
                   confounder_count=int(rng.integers(2, 5)))


def _ellipsoid_mask(dims, center, radii) -> np.ndarray:
    x, y, z = np.ogrid[:dims[0], :dims[1], :dims[2]]
    return (((x - center[0]) / radii[0]) ** 2
            + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2) <= 1.0


def _sphere_mask(dims, center, radius) -> np.ndarray:
    return _ellipsoid_mask(dims, center, (radius, radius, radius))


def _sample_inside(rng, kidney: EllipsoidSpec, shrink=0.75):
    # rejection sample in the unit ball, scaled into the ellipsoid
    while True:
        u = rng.uniform(-1, 1, size=3)
        if (u ** 2).sum() <= 1.0:
            return tuple(kidney.center[a] + shrink * kidney.radii[a] * u[a]
                         for a in range(3))


def _midslice_polygon(kidney: EllipsoidSpec, n_vertices: int = 24) -> np.ndarray:
    angles = np.linspace(0, 2 * np.pi, n_vertices, endpoint=False)
    return np.column_stack([
        kidney.center[0] + kidney.radii[0] * np.cos(angles),
        kidney.center[1] + kidney.radii[1] * np.sin(angles)])


def generate_phantom(spec: PhantomSpec):
    """Build (ct, truth, annotations) for one phantom.

    Returns the CT-like volume in HU, the label volume, and a dict with
    the right/left mid-slice seed annotations.
    """
    rng = np.random.default_rng([spec.seed, 0xFA7708])
    dims = spec.dims
    ct = np.full(dims, HU_BACKGROUND, dtype=np.float64)
    labels = np.zeros(dims, dtype=np.uint8)

    masks = {}
    for target, kidney, label in ((TARGET_RIGHT, spec.right, LABEL_RIGHT),
                                  (TARGET_LEFT, spec.left, LABEL_LEFT)):
        mask = _ellipsoid_mask(dims, kidney.center, kidney.radii)
        if (labels[mask] != 0).any():
            raise ParameterError("kidney ellipsoids overlap")
        labels[mask] = label
        ct[mask] = HU_PARENCHYMA
        masks[target] = mask

    def cyst_hu():
        mode = (spec.cyst_intensity_fluid if rng.uniform() < 0.5
                else spec.cyst_intensity_hemorrhagic)
        return rng.uniform(*mode)

    # cysts: intensity blobs strictly inside each kidney, kept off the
    # surface so the parenchyma rim stays intact; labels untouched
    for target, kidney in ((TARGET_RIGHT, spec.right), (TARGET_LEFT, spec.left)):
        interior = ndimage.binary_erosion(masks[target], iterations=2)
        for _ in range(spec.cysts_per_kidney):
            center = _sample_inside(rng, kidney)
            radius = rng.uniform(*spec.cyst_radius)
            blob = _sphere_mask(dims, center, radius) & interior
            ct[blob] = cyst_hu()

    # confounders: cyst-like blobs just outside the right kidney (liver
    # side), not touching the kidney surface
    outside = ~ndimage.binary_dilation(labels > 0, iterations=2)
    kidney = spec.right
    for _ in range(spec.confounder_count):
        direction = rng.uniform(-1, 1, size=3)
        direction[0] = -abs(direction[0])  # push away from the midline
        direction /= np.linalg.norm(direction)
        dist = rng.uniform(1.3, 1.7)
        center = tuple(np.clip(
            kidney.center[a] + dist * kidney.radii[a] * direction[a],
            2, dims[a] - 3) for a in range(3))
        radius = rng.uniform(*spec.confounder_radius)
        blob = _sphere_mask(dims, center, radius) & outside
        ct[blob] = cyst_hu()

    if spec.noise_hu > 0:
        ct += rng.normal(0.0, spec.noise_hu, size=dims)

    vol = Volume3(ct.astype(np.float32), spec.spacing,
                  channel_kind=ChannelKind.CT_HU)
    truth = LabelVolume(labels, spec.spacing)
    annotations = {
        TARGET_RIGHT: SeedAnnotation.build(
            TARGET_RIGHT, int(spec.right.center[2]),
            _midslice_polygon(spec.right), dims),
        TARGET_LEFT: SeedAnnotation.build(
            TARGET_LEFT, int(spec.left.center[2]),
            _midslice_polygon(spec.left), dims),
    }
    return vol, truth, annotations


def phantom_suite(count: int = 12, base_seed: int = 20_000) -> list[PhantomSpec]:
    """The fixed evaluation suite: deterministic specs, published seeds."""
    return [PhantomSpec.random(base_seed + i) for i in range(count)]


def materialize_suite(out_dir: str, count: int = 12,
                      base_seed: int = 20_000) -> str:
    """Write the suite to disk (ct/truth .mhd pairs, annotation JSON,
    manifest). Returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for spec in phantom_suite(count, base_seed):
        case_id = f"phantom{spec.seed - base_seed:02d}"
        ct, truth, anns = generate_phantom(spec)
        write_mhd(ct, os.path.join(out_dir, f"{case_id}_ct.mhd"))
        write_label_mhd(truth, os.path.join(out_dir, f"{case_id}_truth.mhd"))
        ann_paths = {}
        for target, ann in anns.items():
            name = f"{case_id}_seed_{target}.json"
            with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
                json.dump(ann.to_json_dict(), fh)
            ann_paths[target] = name
        entries.append({
            "case_id": case_id,
            "ct_path": f"{case_id}_ct.mhd",
            "annotation_right": ann_paths[TARGET_RIGHT],
            "annotation_left": ann_paths[TARGET_LEFT],
            "ground_truth_path": f"{case_id}_truth.mhd",
        })
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
    return manifest_path
