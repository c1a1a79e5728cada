"""Multi-class random forest over box features.

Training follows the classic recipe: per tree, a bagged subsample; per
node, 100 randomly drawn candidate features, each scanned with 10
equally spaced interior thresholds; the split with the highest entropy
gain wins. Leaves store class histograms; prediction averages the leaf
posteriors across trees.

Determinism contract: tree i draws everything (its bag, then candidate
features in node preorder) from a generator seeded with (master_seed, i),
so a (samples, config, master_seed) triple fully determines the
serialized model bytes, independent of worker parallelism.
"""

from __future__ import annotations

import json
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from geoforest.errors import DatasetError, ModelError, ParameterError
from geoforest.features import (
    FeatureDescriptor,
    FeatureRanges,
    IntegralStack,
    combine_means,
    eval_feature_batch,
    sample_feature,
)
from geoforest.volume import ChannelStack, LabelVolume, N_CLASSES

MODEL_SCHEMA = 1


def worker_count() -> int:
    """Worker parallelism: all cores, capped by GEOFOREST_THREADS."""
    cap = os.environ.get("GEOFOREST_THREADS")
    cores = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(cores, int(cap)))
        except ValueError:
            return cores
    return cores


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 16
    max_depth: int = 18
    min_samples_split: int = 8
    n_candidate_features: int = 100
    n_thresholds: int = 10
    samples_per_class_per_volume: int = 4000
    bagging_fraction: float = 0.66
    feature_ranges: FeatureRanges = field(default_factory=FeatureRanges)

    def __post_init__(self):
        for name in ("n_trees", "min_samples_split", "n_candidate_features",
                     "n_thresholds", "samples_per_class_per_volume"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.max_depth < 0:
            raise ParameterError("max_depth must be >= 0")
        if not 0 < self.bagging_fraction <= 1:
            raise ParameterError("bagging_fraction must be in (0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "n_candidate_features": self.n_candidate_features,
            "n_thresholds": self.n_thresholds,
            "samples_per_class_per_volume": self.samples_per_class_per_volume,
            "bagging_fraction": self.bagging_fraction,
            "feature_ranges": {"offset_range": self.feature_ranges.offset_range,
                               "max_extent": self.feature_ranges.max_extent},
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        ranges = obj.pop("feature_ranges", None)
        if ranges is not None:
            obj["feature_ranges"] = FeatureRanges(**ranges)
        return cls(**obj)


class SampleSet:
    """Training voxels: parallel arrays of volume id, position and label."""

    def __init__(self, volume_ids, positions, labels):
        self.volume_ids = np.asarray(volume_ids, dtype=np.int64)
        self.positions = np.asarray(positions, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ParameterError("positions must be an (n, 3) array")
        if not (len(self.volume_ids) == len(self.positions) == len(self.labels)):
            raise ParameterError("sample arrays must have equal length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise ParameterError("labels must be in {0, 1, 2}")

    def __len__(self) -> int:
        return len(self.labels)


class _SampleEvaluator:
    """Evaluates a feature on arbitrary subsets of a sample set.

    When all volumes share one grid the per-channel integral tables are
    stacked into a single flat array, so one gather serves every sample
    regardless of its source volume; otherwise evaluation falls back to
    one vectorized pass per volume."""

    def __init__(self, stacks: list[IntegralStack], samples: SampleSet):
        self.stacks = stacks
        self.samples = samples
        self.n_channels = len(stacks[0])
        dims = {s.ivs[0].dims for s in stacks}
        self._stacked = None
        if len(dims) == 1:
            self._dims = stacks[0].ivs[0].dims
            self._tables = [
                np.ascontiguousarray(
                    np.stack([s.ivs[k].table for s in stacks])).reshape(-1)
                for k in range(self.n_channels)]
            self._tsize = int(np.prod(np.asarray(self._dims) + 1))
            self._stacked = True
            self._bases = samples.volume_ids * self._tsize

    def _stacked_means(self, idx, base, channel, offset, size):
        nx, ny, nz = self._dims
        sx = (ny + 1) * (nz + 1)
        sy = nz + 1
        pos = self.samples.positions
        cx = pos[idx, 0] + offset[0]
        cy = pos[idx, 1] + offset[1]
        cz = pos[idx, 2] + offset[2]
        hx, hy, hz = (size[0] - 1) // 2, (size[1] - 1) // 2, (size[2] - 1) // 2
        x0 = np.clip(cx - hx, 0, nx)
        x1 = np.clip(cx + hx + 1, 0, nx)
        y0 = np.clip(cy - hy, 0, ny)
        y1 = np.clip(cy + hy + 1, 0, ny)
        z0 = np.clip(cz - hz, 0, nz)
        z1 = np.clip(cz + hz + 1, 0, nz)
        counts = (x1 - x0) * (y1 - y0) * (z1 - z0)
        x0 = x0 * sx + base
        x1 = x1 * sx + base
        y0 *= sy
        y1 *= sy
        a = x1 + y1
        b = x0 + y1
        c = x1 + y0
        d = x0 + y0
        t = self._tables[channel]
        sums = (t[a + z1] - t[b + z1] - t[c + z1] - t[a + z0]
                + t[d + z1] + t[b + z0] + t[c + z0] - t[d + z0])
        np.divide(sums, counts, out=sums, where=counts > 0)
        sums[counts == 0] = 0.0
        return sums

    def groups_for(self, idx: np.ndarray):
        if self._stacked:
            return self._bases[idx]
        vids = self.samples.volume_ids[idx]
        order = np.argsort(vids, kind="stable")
        sorted_idx = idx[order]
        sorted_vids = vids[order]
        bounds = np.flatnonzero(np.diff(sorted_vids)) + 1
        starts = np.concatenate(([0], bounds))
        stops = np.concatenate((bounds, [len(sorted_vids)]))
        return [(int(sorted_vids[a]), sorted_idx[a:b], order[a:b])
                for a, b in zip(starts, stops)]

    def evaluate(self, f: FeatureDescriptor, idx: np.ndarray,
                 groups=None) -> np.ndarray:
        if f.max_channel() >= self.n_channels:
            raise ParameterError("feature references a channel outside the stack")
        if self._stacked:
            base = groups if groups is not None else self._bases[idx]
            mean_a = self._stacked_means(idx, base, f.channel_a, f.offset_a,
                                         f.size_a)
            mean_b = self._stacked_means(idx, base, f.channel_b, f.offset_b,
                                         f.size_b)
            return combine_means(f.combine, mean_a, mean_b)
        out = np.empty(len(idx), dtype=np.float64)
        for vid, global_idx, local_pos in groups or self.groups_for(idx):
            out[local_pos] = eval_feature_batch(
                self.stacks[vid], self.samples.positions[global_idx], f)
        return out


def entropy(hist) -> float:
    """Shannon entropy (bits) of a class-count histogram."""
    counts = np.asarray(hist, dtype=np.float64)
    if (counts < 0).any():
        raise ParameterError("histogram counts must be non-negative")
    total = counts.sum()
    if total == 0:
        raise ParameterError("entropy of an all-zero histogram is undefined")
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _entropy_rows(hists: np.ndarray) -> np.ndarray:
    totals = hists.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = hists / totals
        terms = np.where(hists > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=1)


def best_split(evaluator: _SampleEvaluator, idx: np.ndarray,
               rng: np.random.Generator, config: TrainConfig):
    """Search candidate (feature, threshold) pairs for the best entropy gain.

    Draws exactly n_candidate_features descriptors from rng (via
    sample_feature, in order) and nothing else, so a replayed generator
    reproduces the candidate pool. Thresholds are the 10 interior points
    t_k = min + k (max - min) / 11; ties keep the first candidate in
    evaluation order. Returns (feature, threshold, gain) or None.
    """
    labels = evaluator.samples.labels[idx]
    n = len(labels)
    parent_hist = np.bincount(labels, minlength=N_CLASSES).astype(np.float64)
    h_parent = entropy(parent_hist)
    groups = evaluator.groups_for(idx)
    k_thr = config.n_thresholds
    steps = np.arange(1, k_thr + 1, dtype=np.float64) / (k_thr + 1)

    class_masks = [labels == c for c in range(N_CLASSES)]

    best = None
    best_gain = 0.0
    for _ in range(config.n_candidate_features):
        f = sample_feature(rng, evaluator.n_channels, config.feature_ranges)
        vals = evaluator.evaluate(f, idx, groups)
        vmin = vals.min()
        vmax = vals.max()
        if vmin == vmax:
            continue
        thresholds = vmin + steps * (vmax - vmin)
        # bucket b = number of thresholds strictly below the value, so the
        # left-child count for threshold j is #(bucket <= j) per class
        bucket = np.searchsorted(thresholds, vals, side="left")
        left = np.empty((k_thr, N_CLASSES))
        for c in range(N_CLASSES):
            h = np.bincount(bucket[class_masks[c]], minlength=k_thr + 1)
            left[:, c] = np.cumsum(h[:k_thr])
        n_left = left.sum(axis=1)
        n_right = n - n_left
        valid = (n_left > 0) & (n_right > 0)
        if not valid.any():
            continue
        right = parent_hist[None, :] - left
        gains = np.full(k_thr, -np.inf)
        gains[valid] = (h_parent
                        - (n_left[valid] / n) * _entropy_rows(left[valid])
                        - (n_right[valid] / n) * _entropy_rows(right[valid]))
        k_best = int(np.argmax(gains))
        if gains[k_best] > best_gain:
            best_gain = float(gains[k_best])
            best = (f, float(thresholds[k_best]), best_gain)
    return best


class Tree:
    """Flat node arena in preorder; leaves hold class histograms."""

    def __init__(self, features, thresholds, lefts, rights, hists):
        self.features = features        # (n_nodes, 15) int64, split nodes only
        self.thresholds = thresholds    # (n_nodes,) float64
        self.lefts = lefts              # (n_nodes,) int64, -1 for leaves
        self.rights = rights
        self.hists = hists              # (n_nodes, 3) int64, leaves only
        with np.errstate(invalid="ignore"):
            totals = hists.sum(axis=1, keepdims=True)
            self.posteriors = np.divide(hists, totals,
                                        out=np.zeros_like(hists, dtype=np.float64),
                                        where=totals > 0)

    @property
    def n_nodes(self) -> int:
        return len(self.lefts)

    def is_leaf(self, node_id: int) -> bool:
        return self.lefts[node_id] < 0

    def n_leaves(self) -> int:
        return int((self.lefts < 0).sum())

    def to_json_nodes(self) -> list[dict]:
        nodes = []
        for i in range(self.n_nodes):
            if self.lefts[i] < 0:
                nodes.append({"h": [int(c) for c in self.hists[i]]})
            else:
                nodes.append({"f": [int(v) for v in self.features[i]],
                              "t": float(self.thresholds[i]),
                              "l": int(self.lefts[i]),
                              "r": int(self.rights[i])})
        return nodes

    @classmethod
    def from_json_nodes(cls, nodes: list[dict]) -> "Tree":
        n = len(nodes)
        if n == 0:
            raise ModelError("tree has no nodes")
        features = np.zeros((n, 15), dtype=np.int64)
        thresholds = np.zeros(n, dtype=np.float64)
        lefts = np.full(n, -1, dtype=np.int64)
        rights = np.full(n, -1, dtype=np.int64)
        hists = np.zeros((n, N_CLASSES), dtype=np.int64)
        for i, node in enumerate(nodes):
            if "h" in node:
                hist = node["h"]
                if len(hist) != N_CLASSES or sum(hist) <= 0 or min(hist) < 0:
                    raise ModelError(f"leaf {i} has an invalid histogram {hist}")
                hists[i] = hist
            elif "f" in node:
                FeatureDescriptor.from_flat(node["f"])  # validates
                features[i] = node["f"]
                thresholds[i] = float(node["t"])
                lefts[i] = int(node["l"])
                rights[i] = int(node["r"])
                if not (0 <= lefts[i] < n and 0 <= rights[i] < n):
                    raise ModelError(f"node {i} has child ids out of range")
            else:
                raise ModelError(f"node {i} is neither split nor leaf")
        return cls(features, thresholds, lefts, rights, hists)

    def route_batch(self, istack: IntegralStack, positions: np.ndarray,
                    out: np.ndarray) -> None:
        """Accumulate this tree's leaf posteriors into out (n, 3)."""
        stack = [(0, np.arange(len(positions)))]
        while stack:
            node_id, idx = stack.pop()
            if idx.size == 0:
                continue
            if self.is_leaf(node_id):
                out[idx] += self.posteriors[node_id]
                continue
            f = FeatureDescriptor.from_flat(self.features[node_id])
            vals = eval_feature_batch(istack, positions[idx], f)
            goes_left = vals <= self.thresholds[node_id]
            stack.append((int(self.lefts[node_id]), idx[goes_left]))
            stack.append((int(self.rights[node_id]), idx[~goes_left]))


def train_tree(evaluator: _SampleEvaluator, bag_idx: np.ndarray,
               rng: np.random.Generator, config: TrainConfig) -> Tree:
    """Grow one tree on the given sample indices (preorder arena)."""
    if bag_idx.size == 0:
        raise ParameterError("cannot train a tree on an empty sample set")
    labels = evaluator.samples.labels
    features: list[np.ndarray] = []
    thresholds: list[float] = []
    lefts: list[int] = []
    rights: list[int] = []
    hists: list[np.ndarray] = []

    def add_node() -> int:
        features.append(np.zeros(15, dtype=np.int64))
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        hists.append(np.zeros(N_CLASSES, dtype=np.int64))
        return len(lefts) - 1

    def grow(idx: np.ndarray, depth: int) -> int:
        node_id = add_node()
        hist = np.bincount(labels[idx], minlength=N_CLASSES)
        pure = (hist > 0).sum() == 1
        split = None
        if depth < config.max_depth and idx.size >= config.min_samples_split and not pure:
            split = best_split(evaluator, idx, rng, config)
        if split is None:
            hists[node_id] = hist
            return node_id
        f, threshold, _gain = split
        vals = evaluator.evaluate(f, idx)
        goes_left = vals <= threshold
        features[node_id] = np.asarray(f.to_flat(), dtype=np.int64)
        thresholds[node_id] = threshold
        lefts[node_id] = grow(idx[goes_left], depth + 1)
        rights[node_id] = grow(idx[~goes_left], depth + 1)
        return node_id

    grow(np.sort(bag_idx), 0)
    return Tree(np.asarray(features), np.asarray(thresholds),
                np.asarray(lefts, dtype=np.int64), np.asarray(rights, dtype=np.int64),
                np.asarray(hists))


class Forest:
    def __init__(self, trees: list[Tree], config: TrainConfig,
                 channel_names: tuple[str, ...], rng_seed: int):
        if not trees:
            raise ModelError("a forest needs at least one tree")
        self.trees = trees
        self.config = config
        self.channel_names = tuple(channel_names)
        self.rng_seed = int(rng_seed)

    def to_json_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA,
                "rng_seed": self.rng_seed,
                "config": self.config.to_json_dict(),
                "channel_names": list(self.channel_names),
                "trees": [t.to_json_nodes() for t in self.trees]}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Forest":
        if obj.get("schema") != MODEL_SCHEMA:
            raise ModelError(f"unsupported model schema {obj.get('schema')!r}, "
                             f"expected {MODEL_SCHEMA}")
        try:
            config = TrainConfig.from_json_dict(obj["config"])
            trees = [Tree.from_json_nodes(nodes) for nodes in obj["trees"]]
            names = tuple(obj["channel_names"])
            seed = int(obj["rng_seed"])
        except (KeyError, TypeError) as exc:
            raise ModelError(f"model document missing field: {exc}") from exc
        return cls(trees, config, names, seed)

    def check_layout(self, names) -> None:
        if tuple(names) != self.channel_names:
            raise ModelError(
                f"channel layout mismatch: model expects {list(self.channel_names)}, "
                f"stack provides {list(names)}")


def _tree_rng(master_seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, tree_index])


def _train_one_tree(stacks: list[IntegralStack], samples: SampleSet,
                    config: TrainConfig, master_seed: int, i: int) -> Tree:
    rng = _tree_rng(master_seed, i)
    n = len(samples)
    n_bag = max(1, int(round(config.bagging_fraction * n)))
    bag = rng.choice(n, size=n_bag, replace=False)
    evaluator = _SampleEvaluator(stacks, samples)
    return train_tree(evaluator, bag, rng, config)


_FORK_CONTEXT: dict = {}


def _forked_tree(i: int) -> list[dict]:
    ctx = _FORK_CONTEXT
    tree = _train_one_tree(ctx["stacks"], ctx["samples"], ctx["config"],
                           ctx["master_seed"], i)
    return tree.to_json_nodes()


def train_forest(stacks: list[IntegralStack], samples: SampleSet,
                 config: TrainConfig, master_seed: int,
                 channel_names=None, n_workers: int | None = None) -> Forest:
    """Train n_trees trees on independently drawn bagged subsets.

    `stacks` is indexed by the volume ids in `samples`. Results are
    identical for any worker count.
    """
    if not stacks:
        raise DatasetError("no training volumes supplied")
    if len(samples) == 0:
        raise DatasetError("no training samples supplied")
    if samples.volume_ids.max() >= len(stacks):
        raise DatasetError("sample references a volume id outside the dataset")
    names = tuple(channel_names) if channel_names else tuple(stacks[0].names)
    workers = n_workers if n_workers is not None else worker_count()
    workers = min(workers, config.n_trees)

    if workers > 1 and hasattr(os, "fork"):
        _FORK_CONTEXT.update(stacks=stacks, samples=samples, config=config,
                             master_seed=master_seed)
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                node_lists = pool.map(_forked_tree, range(config.n_trees))
            trees = [Tree.from_json_nodes(nodes) for nodes in node_lists]
        finally:
            _FORK_CONTEXT.clear()
    else:
        trees = [_train_one_tree(stacks, samples, config, master_seed, i)
                 for i in range(config.n_trees)]
    return Forest(trees, config, names, master_seed)


# ---------------------------------------------------------------------------
# prediction

def _posterior_serial(forest: Forest, istack: IntegralStack,
                      positions: np.ndarray) -> np.ndarray:
    out = np.zeros((len(positions), N_CLASSES), dtype=np.float64)
    for tree in forest.trees:
        tree.route_batch(istack, positions, out)
    out /= len(forest.trees)
    return out


def _forked_posterior(bounds: tuple[int, int]) -> np.ndarray:
    ctx = _FORK_CONTEXT
    start, stop = bounds
    return _posterior_serial(ctx["forest"], ctx["istack"],
                             ctx["positions"][start:stop])


def predict_posterior_batch(forest: Forest, istack: IntegralStack,
                            positions: np.ndarray,
                            n_workers: int | None = None) -> np.ndarray:
    """Averaged posteriors for a batch of voxels; large batches fan out
    over forked workers (voxel-chunked, so results are order-identical)."""
    forest.check_layout(istack.names)
    positions = np.asarray(positions, dtype=np.int64)
    workers = n_workers if n_workers is not None else worker_count()
    n = len(positions)
    if workers > 1 and n >= 65536 and hasattr(os, "fork") and not _FORK_CONTEXT:
        edges = np.linspace(0, n, workers * 2 + 1, dtype=int)
        bounds = list(zip(edges[:-1], edges[1:]))
        _FORK_CONTEXT.update(forest=forest, istack=istack, positions=positions)
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                parts = pool.map(_forked_posterior, bounds)
        finally:
            _FORK_CONTEXT.clear()
        return np.concatenate(parts, axis=0)
    return _posterior_serial(forest, istack, positions)


def predict_posterior(forest: Forest, istack: IntegralStack, p) -> np.ndarray:
    """Averaged per-class posterior at one voxel."""
    return predict_posterior_batch(forest, istack, np.asarray(p).reshape(1, 3))[0]


def predict_labels(forest: Forest, stack: ChannelStack,
                   istack: IntegralStack | None = None) -> LabelVolume:
    """Voxel-wise argmax of the averaged posterior (ties go to the lower
    class index, i.e. background first)."""
    forest.check_layout(stack.names)
    istack = istack or IntegralStack(stack)
    nx, ny, nz = stack.dims
    grid = np.indices((nx, ny, nz)).reshape(3, -1).T
    posterior = predict_posterior_batch(forest, istack, grid)
    labels = np.argmax(posterior, axis=1).astype(np.uint8).reshape(nx, ny, nz)
    ct = stack.channels[0]
    return LabelVolume(labels, ct.spacing, ct.origin)


# ---------------------------------------------------------------------------
# persistence

def save_forest(forest: Forest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest.to_json_dict(), fh, separators=(",", ":"))


def load_forest(path: str) -> Forest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ModelError(f"model file {path} is not a JSON object")
    return Forest.from_json_dict(obj)
