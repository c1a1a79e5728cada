"""Independent reference implementations used only by the tests.

Everything here is deliberately written the slow, obvious way (scalar
loops, edge-list relaxation) so it shares no code path with the package.
"""

from __future__ import annotations

import math

import numpy as np


def point_in_polygon(px: float, py: float, pts) -> bool:
    """Even-odd crossing test, counting crossings strictly right of the point."""
    inside = False
    n = len(pts)
    for k in range(n):
        x1, y1 = pts[k]
        x2, y2 = pts[(k + 1) % n]
        if y1 == y2:
            continue
        if (y1 <= py < y2) or (y2 <= py < y1):
            x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if x_int > px:
                inside = not inside
    return inside


def rasterize_by_points(pts, nx: int, ny: int) -> np.ndarray:
    mask = np.zeros((nx, ny), dtype=bool)
    for i in range(nx):
        for j in range(ny):
            mask[i, j] = point_in_polygon(float(i), float(j), pts)
    return mask


def lattice_edges(vals: np.ndarray, spacing, gamma: float, connectivity: int):
    """All directed lattice edges (flat p, flat q, weight), built scalar-wise."""
    dims = vals.shape
    sbar = (spacing[0] + spacing[1] + spacing[2]) / 3.0
    offsets = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if (dx, dy, dz) == (0, 0, 0):
                    continue
                if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                    continue
                offsets.append((dx, dy, dz))
    ps, qs, ws = [], [], []
    for x in range(dims[0]):
        for y in range(dims[1]):
            for z in range(dims[2]):
                for dx, dy, dz in offsets:
                    u, v, w = x + dx, y + dy, z + dz
                    if not (0 <= u < dims[0] and 0 <= v < dims[1] and 0 <= w < dims[2]):
                        continue
                    dpos2 = (dx * spacing[0]) ** 2 + (dy * spacing[1]) ** 2 + (dz * spacing[2]) ** 2
                    di = float(vals[u, v, w]) - float(vals[x, y, z])
                    cost = math.sqrt(dpos2 + (gamma * sbar) ** 2 * di * di)
                    ps.append((x * dims[1] + y) * dims[2] + z)
                    qs.append((u * dims[1] + v) * dims[2] + w)
                    ws.append(cost)
    return np.array(ps), np.array(qs), np.array(ws)


def bellman_ford_geodesic(vals: np.ndarray, spacing, seed_mask: np.ndarray,
                          gamma: float, connectivity: int) -> np.ndarray:
    """Relax all edges until fixpoint; exact shortest path from the seeds."""
    dims = vals.shape
    p, q, w = lattice_edges(vals, spacing, gamma, connectivity)
    dist = np.full(int(np.prod(dims)), np.inf)
    dist[seed_mask.reshape(-1)] = 0.0
    for _ in range(dist.size):
        candidate = dist[p] + w
        if not (candidate < dist[q]).any():
            break
        np.minimum.at(dist, q, candidate)
    return dist.reshape(dims)


def box_sum_direct(vol: np.ndarray, center, size) -> tuple[float, int]:
    """Brute-force clamped box sum and voxel count."""
    dims = vol.shape
    lo = [max(center[a] - (size[a] - 1) // 2, 0) for a in range(3)]
    hi = [min(center[a] + (size[a] - 1) // 2, dims[a] - 1) for a in range(3)]
    if any(hi[a] < lo[a] for a in range(3)):
        return 0.0, 0
    total = 0.0
    count = 0
    for x in range(lo[0], hi[0] + 1):
        for y in range(lo[1], hi[1] + 1):
            for z in range(lo[2], hi[2] + 1):
                total += float(vol[x, y, z])
                count += 1
    return total, count


def box_mean_direct(vol: np.ndarray, center, size) -> float:
    total, count = box_sum_direct(vol, center, size)
    return total / count if count else 0.0
