/**
 * Polygon validity checks mirroring the server's rules (a strict subset:
 * the server additionally checks slice bounds and a non-empty raster).
 */

export type Vertex = [number, number];

function orient(ax: number, ay: number, bx: number, by: number,
                cx: number, cy: number): number {
  const v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
  return v > 0 ? 1 : v < 0 ? -1 : 0;
}

function onSegment(ax: number, ay: number, bx: number, by: number,
                   px: number, py: number): boolean {
  return Math.min(ax, bx) <= px && px <= Math.max(ax, bx) &&
         Math.min(ay, by) <= py && py <= Math.max(ay, by);
}

/** Closed-segment intersection (shared points count). */
export function segmentsIntersect(p1: Vertex, p2: Vertex,
                                  p3: Vertex, p4: Vertex): boolean {
  const o1 = orient(...p1, ...p2, ...p3);
  const o2 = orient(...p1, ...p2, ...p4);
  const o3 = orient(...p3, ...p4, ...p1);
  const o4 = orient(...p3, ...p4, ...p2);
  if (o1 !== o2 && o3 !== o4) return true;
  if (o1 === 0 && onSegment(...p1, ...p2, ...p3)) return true;
  if (o2 === 0 && onSegment(...p1, ...p2, ...p4)) return true;
  if (o3 === 0 && onSegment(...p3, ...p4, ...p1)) return true;
  if (o4 === 0 && onSegment(...p3, ...p4, ...p2)) return true;
  return false;
}

/** True when no two non-adjacent edges of the closed polygon touch. */
export function isSimplePolygon(vertices: Vertex[]): boolean {
  const n = vertices.length;
  if (n < 3) return false;
  const edge = (i: number): [Vertex, Vertex] =>
    [vertices[i], vertices[(i + 1) % n]];
  for (let i = 0; i < n; i++) {
    const [a, b] = edge(i);
    if (a[0] === b[0] && a[1] === b[1]) return false; // zero-length edge
  }
  for (let i = 0; i < n; i++) {
    for (let j = i + 1; j < n; j++) {
      if (j === i + 1 || (i === 0 && j === n - 1)) continue;
      const [a, b] = edge(i);
      const [c, d] = edge(j);
      if (segmentsIntersect(a, b, c, d)) return false;
    }
  }
  return true;
}

export function distance(a: Vertex, b: Vertex): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}
