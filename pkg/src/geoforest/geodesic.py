"""Seed annotations and intensity-weighted geodesic distance volumes.

The user outline is a simple polygon on one slice; its rasterized filled
mask seeds a shortest-path distance computed over the voxel lattice with
edge cost

    sqrt(|dpos|^2 + gamma^2 * dI^2 * sbar^2)

where dpos is the physical step in mm, dI the intensity difference across
the edge (intensities normalized to [0, 1]) and sbar the mean voxel
spacing, which makes the intensity term commensurate with millimeters.
Distances are exact shortest paths (priority-queue propagation), not a
raster-scan approximation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from geoforest.errors import AnnotationError, ParameterError
from geoforest.volume import ChannelKind, Volume3

TARGET_RIGHT = "right"
TARGET_LEFT = "left"
TARGETS = (TARGET_RIGHT, TARGET_LEFT)


# ---------------------------------------------------------------------------
# polygon handling

def _orient(ax, ay, bx, by, cx, cy) -> int:
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return int(v > 0) - int(v < 0)


def _on_segment(ax, ay, bx, by, px, py) -> bool:
    # assumes p collinear with a-b
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """True if closed segments p1-p2 and p3-p4 share any point."""
    o1 = _orient(*p1, *p2, *p3)
    o2 = _orient(*p1, *p2, *p4)
    o3 = _orient(*p3, *p4, *p1)
    o4 = _orient(*p3, *p4, *p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(*p1, *p2, *p3):
        return True
    if o2 == 0 and _on_segment(*p1, *p2, *p4):
        return True
    if o3 == 0 and _on_segment(*p3, *p4, *p1):
        return True
    if o4 == 0 and _on_segment(*p3, *p4, *p2):
        return True
    return False


def polygon_is_simple(polygon: np.ndarray) -> bool:
    """Check that no two non-adjacent edges of the closed polygon touch."""
    pts = np.asarray(polygon, dtype=float)
    n = len(pts)
    if n < 3:
        return False
    edges = [(tuple(pts[i]), tuple(pts[(i + 1) % n])) for i in range(n)]
    for a, b in edges:
        if a == b:
            return False  # zero-length edge
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex by construction
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def validate_polygon(polygon) -> np.ndarray:
    pts = np.asarray(polygon, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise AnnotationError(f"polygon must be an (n, 2) list of vertices, got shape {pts.shape}")
    if len(pts) < 3:
        raise AnnotationError(f"polygon needs at least 3 vertices, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise AnnotationError("polygon vertices must be finite")
    if not polygon_is_simple(pts):
        raise AnnotationError("polygon is self-intersecting")
    return pts


def rasterize_polygon(polygon, slice_dims: tuple[int, int]) -> np.ndarray:
    """Fill a simple polygon on a (nx, ny) pixel grid.

    Pixel (i, j) is set iff its center lies inside the polygon under the
    even-odd rule; centers exactly on an edge follow the half-open
    convention (crossings are counted strictly to the right of the
    center, so left/lower boundaries are filled, right/upper are not).
    """
    pts = validate_polygon(polygon)
    nx, ny = slice_dims
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if lo[0] < -1 or lo[1] < -1 or hi[0] > nx or hi[1] > ny:
        raise AnnotationError(
            f"polygon exceeds slice bounds ({nx}, {ny}) by more than 1 voxel")
    xc = np.arange(nx, dtype=float)
    yc = np.arange(ny, dtype=float)
    crossings = np.zeros((nx, ny), dtype=np.int64)
    n = len(pts)
    for k in range(n):
        x1, y1 = pts[k]
        x2, y2 = pts[(k + 1) % n]
        if y1 == y2:
            continue
        rows = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not rows.any():
            continue
        x_int = x1 + (yc[rows] - y1) * (x2 - x1) / (y2 - y1)
        crossings[:, rows] += x_int[None, :] > xc[:, None]
    return (crossings % 2).astype(bool)


@dataclass(frozen=True)
class SeedAnnotation:
    """A user-drawn mid-slice outline and its rasterized filled mask."""

    target: str
    slice_z: int
    polygon: np.ndarray        # (n, 2) float, voxel units
    mask: np.ndarray           # (nx, ny) bool on slice_z

    @classmethod
    def build(cls, target: str, slice_z: int, polygon,
              dims: tuple[int, int, int]) -> "SeedAnnotation":
        if target not in TARGETS:
            raise AnnotationError(f"target must be 'right' or 'left', got {target!r}")
        nx, ny, nz = dims
        if not 0 <= slice_z < nz:
            raise AnnotationError(f"slice_z={slice_z} outside volume depth {nz}")
        pts = validate_polygon(polygon)
        mask = rasterize_polygon(pts, (nx, ny))
        if not mask.any():
            raise AnnotationError("polygon rasterizes to an empty mask")
        pts.flags.writeable = False
        mask.flags.writeable = False
        return cls(target, int(slice_z), pts, mask)

    def seed_mask_3d(self, dims: tuple[int, int, int]) -> np.ndarray:
        out = np.zeros(dims, dtype=bool)
        out[:, :, self.slice_z] = self.mask
        return out

    def to_json_dict(self) -> dict:
        return {"target": self.target, "slice_z": self.slice_z,
                "polygon": [[float(x), float(y)] for x, y in self.polygon]}


def annotation_from_dict(obj: dict, dims: tuple[int, int, int]) -> SeedAnnotation:
    try:
        target = obj["target"]
        slice_z = int(obj["slice_z"])
        polygon = obj["polygon"]
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"annotation JSON missing/invalid field: {exc}") from exc
    return SeedAnnotation.build(target, slice_z, polygon, dims)


def load_annotation(path: str, dims: tuple[int, int, int]) -> SeedAnnotation:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return annotation_from_dict(obj, dims)


def save_annotation(ann: SeedAnnotation, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ann.to_json_dict(), fh)


# ---------------------------------------------------------------------------
# geodesic distance transform

@dataclass(frozen=True)
class GeodesicParams:
    gamma: float = 1.0
    connectivity: int = 26
    d_cap: float = 300.0  # mm

    def __post_init__(self):
        if self.gamma < 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if self.connectivity not in (6, 26):
            raise ParameterError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.d_cap <= 0:
            raise ParameterError(f"d_cap must be > 0, got {self.d_cap}")


def neighbor_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    """Half of the symmetric neighborhood (one representative per edge pair)."""
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) <= (0, 0, 0):
                    continue  # lexicographic halving: keep one direction per pair
                if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                    continue
                offs.append((dx, dy, dz))
    return offs


def _shifted(n: int, d: int) -> tuple[slice, slice]:
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def seeds_as_mask(seeds, dims: tuple[int, int, int]) -> np.ndarray:
    """Accept an (n, 3) index array or a 3D boolean mask; return the mask."""
    arr = np.asarray(seeds)
    if arr.dtype == bool and arr.shape == tuple(dims):
        return arr
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ParameterError(
            f"seeds must be an (n, 3) index array or a {dims} boolean mask")
    if arr.size == 0:
        raise ParameterError("seed set is empty")
    if (arr < 0).any() or (arr >= np.array(dims)).any():
        raise ParameterError("seed indices out of bounds")
    mask = np.zeros(dims, dtype=bool)
    mask[arr[:, 0], arr[:, 1], arr[:, 2]] = True
    return mask


def geodesic_transform(intensity: Volume3, seeds,
                       params: GeodesicParams = GeodesicParams()) -> Volume3:
    """Exact multi-source shortest-path distance (mm) over the voxel lattice.

    `intensity` is expected in [0, 1] (see normalize_ct); `seeds` is an
    (n, 3) voxel index array or a 3D boolean mask. Returns a float64
    volume with d = 0 exactly on the seeds.
    """
    if not np.all(np.isfinite(intensity.data)):
        raise ParameterError("intensity volume contains non-finite values")
    dims = intensity.dims
    seed_mask = seeds_as_mask(seeds, dims)
    if not seed_mask.any():
        raise ParameterError("seed set is empty")

    vals = intensity.data.astype(np.float64)
    spacing = np.asarray(intensity.spacing)
    sbar = float(spacing.mean())
    n = int(np.prod(dims))
    flat_ids = np.arange(n, dtype=np.int32).reshape(dims)

    rows, cols, weights = [], [], []
    for off in neighbor_offsets(params.connectivity):
        sl_src = tuple(_shifted(dims[a], off[a])[0] for a in range(3))
        sl_dst = tuple(_shifted(dims[a], off[a])[1] for a in range(3))
        src = flat_ids[sl_src].ravel()
        if src.size == 0:
            continue
        dpos2 = float(np.sum((np.asarray(off) * spacing) ** 2))
        di = vals[sl_dst] - vals[sl_src]
        w = np.sqrt(dpos2 + (params.gamma * sbar) ** 2 * di * di)
        rows.append(src)
        cols.append(flat_ids[sl_dst].ravel())
        weights.append(w.ravel())

    sources = flat_ids[seed_mask]
    if not rows:  # single-voxel volume: nothing to propagate
        dist = np.zeros(n)
    else:
        graph = coo_matrix(
            (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        dist = dijkstra(graph, directed=False, indices=sources, min_only=True)
    return Volume3(dist.reshape(dims), intensity.spacing, intensity.origin,
                   ChannelKind.GEODESIC)


def normalize_distance(d: Volume3, d_cap: float = 300.0) -> Volume3:
    """Scale distances into [0, 1]: min(d / d_cap, 1)."""
    if d_cap <= 0:
        raise ParameterError(f"d_cap must be > 0, got {d_cap}")
    if (d.data < 0).any():
        raise ParameterError("distances must be non-negative")
    out = np.minimum(d.data.astype(np.float64) / d_cap, 1.0)
    return Volume3(out.astype(np.float32), d.spacing, d.origin, ChannelKind.GEODESIC)
