"""Tiny on-disk cases for fast pipeline-level tests."""

from __future__ import annotations

import json
import os

import numpy as np

from geoforest.forest import TrainConfig
from geoforest.features import FeatureRanges
from geoforest.pipeline import PipelineConfig, MODE_GEODESIC
from geoforest.volume import LabelVolume, Volume3, write_label_mhd, write_mhd
from geoforest.volume import ChannelKind

DIMS = (24, 20, 12)
MID_Z = 6


def _circle_polygon(cx, cy, r, n=12):
    angles = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return [[cx + r * np.cos(a), cy + r * np.sin(a)] for a in angles]


def make_tiny_case(directory, case_id, seed=0, with_truth=True):
    """A 24x20x12 two-sphere case: right kidney at x~7, left at x~17."""
    rng = np.random.default_rng(seed)
    x, y, z = np.ogrid[:DIMS[0], :DIMS[1], :DIMS[2]]
    right = ((x - 7) ** 2 + (y - 10) ** 2 + ((z - MID_Z) * 1.5) ** 2) <= 4.2 ** 2
    left = ((x - 17) ** 2 + (y - 10) ** 2 + ((z - MID_Z) * 1.5) ** 2) <= 4.2 ** 2
    ct = np.full(DIMS, 40.0) + rng.normal(0, 4.0, DIMS)
    ct[right] = 120.0 + rng.normal(0, 4.0, int(right.sum()))
    ct[left] = 120.0 + rng.normal(0, 4.0, int(left.sum()))
    labels = np.zeros(DIMS, dtype=np.uint8)
    labels[right] = 1
    labels[left] = 2

    os.makedirs(directory, exist_ok=True)
    ct_name = f"{case_id}_ct.mhd"
    write_mhd(Volume3(ct.astype(np.float32), (1, 1, 2), channel_kind=ChannelKind.CT_HU),
              os.path.join(directory, ct_name))
    entry = {"case_id": case_id, "ct_path": ct_name}
    for target, cx in (("right", 7), ("left", 17)):
        ann = {"target": target, "slice_z": MID_Z,
               "polygon": _circle_polygon(cx, 10, 3.2)}
        name = f"{case_id}_{target}.json"
        with open(os.path.join(directory, name), "w") as fh:
            json.dump(ann, fh)
        entry[f"annotation_{target}"] = name
    if with_truth:
        truth_name = f"{case_id}_truth.mhd"
        write_label_mhd(LabelVolume(labels, (1, 1, 2)),
                        os.path.join(directory, truth_name))
        entry["ground_truth_path"] = truth_name
    return entry


def make_tiny_manifest(directory, n_cases=2, with_truth=True):
    entries = [make_tiny_case(directory, f"case{i}", seed=i, with_truth=with_truth)
               for i in range(n_cases)]
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(entries, fh)
    return path


def tiny_config(mode=MODE_GEODESIC, **train_kw):
    base = dict(n_trees=2, max_depth=6, min_samples_split=4,
                n_candidate_features=24, samples_per_class_per_volume=120,
                bagging_fraction=1.0,
                feature_ranges=FeatureRanges(offset_range=3, max_extent=3))
    base.update(train_kw)
    return PipelineConfig(mode=mode, background_margin=6,
                          train=TrainConfig(**base))
