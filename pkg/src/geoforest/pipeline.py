"""End-to-end orchestration: CT + two annotations -> channels -> forest.

Two pipeline modes exist: the baseline classifies on the CT channel
alone; the full method adds one normalized geodesic distance channel per
kidney. Channel order is a fixed contract, (ct, geodesic_right,
geodesic_left), recorded in every model file and enforced at prediction
time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from geoforest.errors import AnnotationError, CaseError, DatasetError, ParameterError
from geoforest.features import IntegralStack
from geoforest.forest import Forest, SampleSet, TrainConfig, predict_labels, save_forest, train_forest
from geoforest.geodesic import (
    TARGET_LEFT,
    TARGET_RIGHT,
    GeodesicParams,
    SeedAnnotation,
    geodesic_transform,
    load_annotation,
    normalize_distance,
)
from geoforest.volume import (
    LABEL_LEFT,
    LABEL_RIGHT,
    ChannelStack,
    LabelVolume,
    Volume3,
    normalize_ct,
    read_label_mhd,
    read_mhd,
    write_label_mhd,
)

MODE_BASELINE = "baseline_ct_only"
MODE_GEODESIC = "with_geodesic"
POSTPROCESS_NONE = "none"
POSTPROCESS_LARGEST = "largest_component_per_class"

CHANNELS_BASELINE = ("ct",)
CHANNELS_GEODESIC = ("ct", "geodesic_right", "geodesic_left")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = MODE_GEODESIC
    window: tuple[float, float] = (-200.0, 500.0)
    geodesic: GeodesicParams = field(default_factory=GeodesicParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    postprocess: str = POSTPROCESS_NONE
    background_margin: int = 30  # voxel dilation of the seed bbox union

    def __post_init__(self):
        if self.mode not in (MODE_BASELINE, MODE_GEODESIC):
            raise ParameterError(f"unknown pipeline mode {self.mode!r}")
        if self.postprocess not in (POSTPROCESS_NONE, POSTPROCESS_LARGEST):
            raise ParameterError(f"unknown postprocess {self.postprocess!r}")
        if self.window[0] >= self.window[1]:
            raise ParameterError("window requires lo < hi")
        if self.background_margin < 0:
            raise ParameterError("background_margin must be >= 0")

    @property
    def channel_names(self) -> tuple[str, ...]:
        return CHANNELS_BASELINE if self.mode == MODE_BASELINE else CHANNELS_GEODESIC

    def to_json_dict(self) -> dict:
        return {"mode": self.mode,
                "window": list(self.window),
                "geodesic": {"gamma": self.geodesic.gamma,
                             "connectivity": self.geodesic.connectivity,
                             "d_cap": self.geodesic.d_cap},
                "train": self.train.to_json_dict(),
                "postprocess": self.postprocess,
                "background_margin": self.background_margin}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        if "window" in obj:
            obj["window"] = tuple(obj["window"])
        if "geodesic" in obj:
            obj["geodesic"] = GeodesicParams(**obj["geodesic"])
        if "train" in obj:
            obj["train"] = TrainConfig.from_json_dict(obj["train"])
        return cls(**obj)


def load_pipeline_config(path: str) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return PipelineConfig.from_json_dict(json.load(fh))


@dataclass
class CaseRecord:
    case_id: str
    ct_path: str
    annotation_right: str | None = None
    annotation_left: str | None = None
    ground_truth_path: str | None = None
    prediction_path: str | None = None

    @property
    def annotation_paths(self) -> dict[str, str | None]:
        return {TARGET_RIGHT: self.annotation_right,
                TARGET_LEFT: self.annotation_left}


def load_manifest(path: str) -> list[CaseRecord]:
    """Read a JSON list of case records; paths resolve against the
    manifest directory."""
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise DatasetError(f"{path}: manifest must be a JSON list of cases")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(base, p)

    cases = []
    seen = set()
    for i, entry in enumerate(entries):
        try:
            case = CaseRecord(
                case_id=str(entry["case_id"]),
                ct_path=resolve(entry["ct_path"]),
                annotation_right=resolve(entry.get("annotation_right")),
                annotation_left=resolve(entry.get("annotation_left")),
                ground_truth_path=resolve(entry.get("ground_truth_path")),
                prediction_path=resolve(entry.get("prediction_path")),
            )
        except KeyError as exc:
            raise DatasetError(f"{path}: case {i} is missing field {exc}") from exc
        if case.case_id in seen:
            raise DatasetError(f"{path}: duplicate case_id {case.case_id!r}")
        seen.add(case.case_id)
        cases.append(case)
    return cases


def load_case_annotations(case: CaseRecord,
                          dims: tuple[int, int, int]) -> dict[str, SeedAnnotation]:
    """Load both annotations and key them by their declared target."""
    anns = {}
    for slot, path in case.annotation_paths.items():
        if path is None:
            raise CaseError(f"case {case.case_id}: missing {slot} annotation")
        try:
            ann = load_annotation(path, dims)
        except AnnotationError as exc:
            raise CaseError(f"case {case.case_id}: {exc}") from exc
        if ann.target in anns:
            raise CaseError(
                f"case {case.case_id}: both annotations target {ann.target!r}")
        anns[ann.target] = ann
    if set(anns) != {TARGET_RIGHT, TARGET_LEFT}:
        raise CaseError(f"case {case.case_id}: need one right and one left annotation")
    return anns


def build_stack(case: CaseRecord, config: PipelineConfig,
                ct: Volume3 | None = None,
                annotations: dict[str, SeedAnnotation] | None = None) -> ChannelStack:
    """Load and assemble the channel stack for one case."""
    ct = ct if ct is not None else read_mhd(case.ct_path)
    norm = normalize_ct(ct, *config.window)
    if config.mode == MODE_BASELINE:
        return ChannelStack((norm,), CHANNELS_BASELINE)
    annotations = annotations or load_case_annotations(case, ct.dims)
    channels = [norm]
    for target in (TARGET_RIGHT, TARGET_LEFT):
        seed_mask = annotations[target].seed_mask_3d(ct.dims)
        dist = geodesic_transform(norm, seed_mask, config.geodesic)
        channels.append(normalize_distance(dist, config.geodesic.d_cap))
    return ChannelStack(tuple(channels), CHANNELS_GEODESIC)


@dataclass
class CaseData:
    """Everything loaded for one case under one pipeline config."""

    case: CaseRecord
    stack: ChannelStack
    istack: IntegralStack
    annotations: dict[str, SeedAnnotation]
    truth: LabelVolume | None = None


def load_case(case: CaseRecord, config: PipelineConfig,
              need_truth: bool = False) -> CaseData:
    ct = read_mhd(case.ct_path)
    annotations = load_case_annotations(case, ct.dims)
    stack = build_stack(case, config, ct=ct, annotations=annotations)
    truth = None
    if case.ground_truth_path:
        truth = read_label_mhd(case.ground_truth_path)
        if truth.dims != ct.dims:
            raise CaseError(f"case {case.case_id}: ground truth dims {truth.dims} "
                            f"do not match CT dims {ct.dims}")
    elif need_truth:
        raise DatasetError(f"case {case.case_id} has no ground truth")
    return CaseData(case, stack, IntegralStack(stack), annotations, truth)


def _background_region(annotations: dict[str, SeedAnnotation],
                       dims: tuple[int, int, int], margin: int) -> np.ndarray:
    """Dilated union of the two seed-mask bounding boxes."""
    region = np.zeros(dims, dtype=bool)
    for ann in annotations.values():
        xs, ys = np.nonzero(ann.mask)
        box = ((int(xs.min()), int(xs.max())),
               (int(ys.min()), int(ys.max())),
               (ann.slice_z, ann.slice_z))
        lo = [max(0, b[0] - margin) for b in box]
        hi = [min(dims[a] - 1, box[a][1] + margin) for a in range(3)]
        region[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] = True
    return region


def draw_training_samples(case_data: list[CaseData], config: PipelineConfig,
                          rng: np.random.Generator) -> SampleSet:
    """Balanced per-volume draw: up to samples_per_class_per_volume voxels
    per class, background restricted to the dilated seed neighbourhood."""
    n_per = config.train.samples_per_class_per_volume
    vids, positions, labels = [], [], []
    for vid, data in enumerate(case_data):
        truth = data.truth
        if truth is None:
            raise DatasetError(f"case {data.case.case_id} has no ground truth")
        bg_region = _background_region(data.annotations, truth.dims,
                                       config.background_margin)
        for class_id in (0, LABEL_RIGHT, LABEL_LEFT):
            if class_id == 0:
                candidates = np.argwhere(bg_region & (truth.labels == 0))
            else:
                candidates = np.argwhere(truth.labels == class_id)
            if len(candidates) == 0:
                raise DatasetError(
                    f"case {data.case.case_id}: no voxels of class {class_id} "
                    f"available for sampling")
            take = min(n_per, len(candidates))
            chosen = candidates[rng.choice(len(candidates), size=take,
                                           replace=False)]
            positions.append(chosen)
            labels.append(np.full(take, class_id, dtype=np.int64))
            vids.append(np.full(take, vid, dtype=np.int64))
    return SampleSet(np.concatenate(vids), np.concatenate(positions),
                     np.concatenate(labels))

# sampling uses its own stream so tree streams (master_seed, i) stay untouched
_SAMPLE_STREAM = 0xFFFFFFFF


def run_training(cases: list[CaseRecord], config: PipelineConfig, seed: int,
                 model_path: str | None = None,
                 case_data: list[CaseData] | None = None) -> Forest:
    """Train a forest over all cases (each must carry ground truth)."""
    if case_data is None:
        case_data = [load_case(c, config, need_truth=True) for c in cases]
    rng = np.random.default_rng([seed, _SAMPLE_STREAM])
    samples = draw_training_samples(case_data, config, rng)
    forest = train_forest([d.istack for d in case_data], samples, config.train,
                          seed, channel_names=config.channel_names)
    if model_path:
        save_forest(forest, model_path)
    return forest


def _keep_seeded_component(mask: np.ndarray, seed_mask: np.ndarray) -> np.ndarray:
    """Keep only the 26-connected component of mask that contains (or, if
    none overlaps, lies nearest to) the seed mask."""
    if not mask.any():
        return mask
    structure = np.ones((3, 3, 3), dtype=bool)
    components, n = ndimage.label(mask, structure=structure)
    if n <= 1:
        return mask
    overlap = np.bincount(components[seed_mask].ravel(), minlength=n + 1)[1:]
    if overlap.any():
        keep = int(np.argmax(overlap)) + 1
    else:
        # nearest component: minimal distance-to-seed over its voxels
        dist_to_seed = ndimage.distance_transform_edt(~seed_mask)
        keep = int(np.argmin(ndimage.minimum(dist_to_seed, components,
                                             index=np.arange(1, n + 1)))) + 1
    return components == keep


def run_prediction(case: CaseRecord, forest: Forest, config: PipelineConfig,
                   case_data: CaseData | None = None,
                   prediction_path: str | None = None) -> LabelVolume:
    """Predict the full label volume for one case, with optional
    largest-component cleanup per kidney class."""
    data = case_data if case_data is not None else load_case(case, config)
    forest.check_layout(data.stack.names)
    labels = predict_labels(forest, data.stack, data.istack)
    if config.postprocess == POSTPROCESS_LARGEST:
        out = np.array(labels.labels)
        for target, class_id in ((TARGET_RIGHT, LABEL_RIGHT),
                                 (TARGET_LEFT, LABEL_LEFT)):
            mask = labels.labels == class_id
            seed_mask = data.annotations[target].seed_mask_3d(labels.dims)
            kept = _keep_seeded_component(mask, seed_mask)
            out[mask & ~kept] = 0
        labels = LabelVolume(out, labels.spacing, labels.origin)
    if prediction_path:
        write_label_mhd(labels, prediction_path)
    return labels
