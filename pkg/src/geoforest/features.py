"""Box features evaluated in constant time via integral volumes.

A feature compares the mean values of two boxes placed at fixed offsets
from the query voxel, each box reading one channel of the stack, combined
by one of six scalar functions. Boxes that stick out of the volume are
clamped and the mean uses the clamped voxel count; a fully outside box
contributes 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geoforest.errors import ParameterError
from geoforest.volume import ChannelStack, Volume3

COMBINE_MEAN_A = 1
COMBINE_MEAN_B = 2
COMBINE_SUM = 3
COMBINE_DIFF = 4
COMBINE_ABS_DIFF = 5
COMBINE_MAX = 6
N_COMBINE = 6


@dataclass(frozen=True)
class FeatureDescriptor:
    """The 11-parameter box feature: two offsets, two odd box extents, two
    channel indices and a combining function selector."""

    offset_a: tuple[int, int, int]
    offset_b: tuple[int, int, int]
    size_a: tuple[int, int, int]
    size_b: tuple[int, int, int]
    channel_a: int
    channel_b: int
    combine: int

    def __post_init__(self):
        for size in (self.size_a, self.size_b):
            if any(s < 1 or s % 2 == 0 for s in size):
                raise ParameterError(f"box extents must be odd and >= 1, got {size}")
        if self.channel_a < 0 or self.channel_b < 0:
            raise ParameterError("channel indices must be non-negative")
        if not 1 <= self.combine <= N_COMBINE:
            raise ParameterError(f"combine selector must be in 1..{N_COMBINE}, "
                                 f"got {self.combine}")

    def to_flat(self) -> list[int]:
        return [*self.offset_a, *self.offset_b, *self.size_a, *self.size_b,
                self.channel_a, self.channel_b, self.combine]

    @classmethod
    def from_flat(cls, flat) -> "FeatureDescriptor":
        if len(flat) != 15:
            raise ParameterError(f"feature vector needs 15 entries, got {len(flat)}")
        f = [int(v) for v in flat]
        return cls(tuple(f[0:3]), tuple(f[3:6]), tuple(f[6:9]), tuple(f[9:12]),
                   f[12], f[13], f[14])

    def max_channel(self) -> int:
        return max(self.channel_a, self.channel_b)


class IntegralVolume:
    """Zero-padded 3D cumulative sum table with double accumulators."""

    def __init__(self, vol: Volume3):
        data = vol.data
        if not np.all(np.isfinite(data)):
            raise ParameterError("cannot build an integral volume over non-finite data")
        nx, ny, nz = data.shape
        table = np.zeros((nx + 1, ny + 1, nz + 1), dtype=np.float64)
        table[1:, 1:, 1:] = (data.astype(np.float64)
                             .cumsum(axis=0).cumsum(axis=1).cumsum(axis=2))
        self.table = table
        self.dims = (nx, ny, nz)
        # flat view plus strides for the gather-heavy hot path
        self._flat = table.reshape(-1)
        self._sx = (ny + 1) * (nz + 1)
        self._sy = nz + 1

    def box_sums(self, centers: np.ndarray, size) -> tuple[np.ndarray, np.ndarray]:
        """Clamped box sums and voxel counts for a batch of centers (n, 3)."""
        centers = np.asarray(centers, dtype=np.int64)
        nx, ny, nz = self.dims
        hx = (int(size[0]) - 1) // 2
        hy = (int(size[1]) - 1) // 2
        hz = (int(size[2]) - 1) // 2
        cx, cy, cz = centers[:, 0], centers[:, 1], centers[:, 2]
        # after clipping, hi >= lo always; a fully outside box collapses to
        # an equal pair, giving a zero count on that axis
        x0 = np.clip(cx - hx, 0, nx) * self._sx
        x1 = np.clip(cx + hx + 1, 0, nx) * self._sx
        y0 = np.clip(cy - hy, 0, ny) * self._sy
        y1 = np.clip(cy + hy + 1, 0, ny) * self._sy
        z0 = np.clip(cz - hz, 0, nz)
        z1 = np.clip(cz + hz + 1, 0, nz)
        counts = ((x1 - x0) // self._sx) * ((y1 - y0) // self._sy) * (z1 - z0)
        t = self._flat
        a = x1 + y1
        b = x0 + y1
        c = x1 + y0
        d = x0 + y0
        sums = (t[a + z1] - t[b + z1] - t[c + z1] - t[a + z0]
                + t[d + z1] + t[b + z0] + t[c + z0] - t[d + z0])
        sums[counts == 0] = 0.0
        return sums, counts

    def box_means(self, centers: np.ndarray, size) -> np.ndarray:
        sums, counts = self.box_sums(centers, size)
        np.divide(sums, counts, out=sums, where=counts > 0)
        return sums


def build_integral(vol: Volume3) -> IntegralVolume:
    return IntegralVolume(vol)


def box_mean(iv: IntegralVolume, center, size) -> float:
    """Mean of one clamped box; 0 if the box lies fully outside."""
    centers = np.asarray(center, dtype=np.int64).reshape(1, 3)
    return float(iv.box_means(centers, size)[0])


class IntegralStack:
    """Per-channel integral volumes of a stack, ready for feature evaluation."""

    def __init__(self, stack: ChannelStack):
        self.ivs = [IntegralVolume(ch) for ch in stack.channels]
        self.names = stack.names
        self.dims = stack.dims

    def __len__(self) -> int:
        return len(self.ivs)


def combine_means(selector: int, mean_a: np.ndarray, mean_b: np.ndarray) -> np.ndarray:
    """Apply one of the six scalar combining functions to the two box means."""
    if selector == COMBINE_MEAN_A:
        return mean_a
    if selector == COMBINE_MEAN_B:
        return mean_b
    if selector == COMBINE_SUM:
        return mean_a + mean_b
    if selector == COMBINE_DIFF:
        return mean_a - mean_b
    if selector == COMBINE_ABS_DIFF:
        return np.abs(mean_a - mean_b)
    if selector == COMBINE_MAX:
        return np.maximum(mean_a, mean_b)
    raise ParameterError(f"combine selector must be in 1..{N_COMBINE}, got {selector}")


def eval_feature_batch(istack: IntegralStack, positions: np.ndarray,
                       f: FeatureDescriptor) -> np.ndarray:
    """Feature values at many voxel positions (n, 3) at once."""
    if f.max_channel() >= len(istack):
        raise ParameterError(
            f"feature references channel {f.max_channel()} but the stack has "
            f"{len(istack)} channels")
    positions = np.asarray(positions, dtype=np.int64)
    mean_a = istack.ivs[f.channel_a].box_means(positions + np.asarray(f.offset_a),
                                               f.size_a)
    mean_b = istack.ivs[f.channel_b].box_means(positions + np.asarray(f.offset_b),
                                               f.size_b)
    return combine_means(f.combine, mean_a, mean_b)


def eval_feature(istack: IntegralStack, p, f: FeatureDescriptor) -> float:
    return float(eval_feature_batch(istack, np.asarray(p).reshape(1, 3), f)[0])


@dataclass(frozen=True)
class FeatureRanges:
    """Sampling ranges for random feature draws."""

    offset_range: int = 20   # offsets uniform in [-offset_range, offset_range]
    max_extent: int = 15     # odd extents uniform in {1, 3, ..., max_extent}

    def __post_init__(self):
        if self.offset_range < 0:
            raise ParameterError("offset_range must be >= 0")
        if self.max_extent < 1 or self.max_extent % 2 == 0:
            raise ParameterError("max_extent must be odd and >= 1")


def sample_feature(rng: np.random.Generator, n_channels: int,
                   ranges: FeatureRanges = FeatureRanges()) -> FeatureDescriptor:
    """Draw one feature uniformly within the ranges.

    The draw order (offsets a, offsets b, sizes a, sizes b, channels, selector)
    is part of the determinism contract: replaying an identically seeded rng
    reproduces the same sequence of descriptors.
    """
    r = ranges.offset_range
    half_max = (ranges.max_extent + 1) // 2
    off_a = tuple(int(v) for v in rng.integers(-r, r + 1, size=3))
    off_b = tuple(int(v) for v in rng.integers(-r, r + 1, size=3))
    size_a = tuple(int(2 * v + 1) for v in rng.integers(0, half_max, size=3))
    size_b = tuple(int(2 * v + 1) for v in rng.integers(0, half_max, size=3))
    k_a = int(rng.integers(0, n_channels))
    k_b = int(rng.integers(0, n_channels))
    j = int(rng.integers(1, N_COMBINE + 1))
    return FeatureDescriptor(off_a, off_b, size_a, size_b, k_a, k_b, j)
