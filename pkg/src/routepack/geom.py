"""Screen-space polyline geometry: offsetting, simplification, intersections.

All functions operate on (n, 2) float arrays of pixel coordinates (y-down).
The +90-degree normal of a direction (dx, dy) is (-dy, dx); positive offset
distances displace along that normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def rot90(v: np.ndarray) -> np.ndarray:
    """Rotate a vector by +90 degrees (the offset normal direction)."""
    return np.array([-v[1], v[0]])


def angle_deg(v) -> float:
    """Vector angle in degrees, in (-180, 180]."""
    a = math.degrees(math.atan2(v[1], v[0]))
    return 180.0 if a == -180.0 else a


def normalize_deg(a: float) -> float:
    """Normalize an angle into (-180, 180]."""
    a = (a + 180.0) % 360.0 - 180.0
    return 180.0 if a == -180.0 else a


def polyline_length(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*(pts[1:] - pts[:-1]).T).sum())


def arclengths(pts: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex, starting at 0."""
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.hypot(*(pts[1:] - pts[:-1]).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample(pts: np.ndarray, spacing: float) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 2:
        return pts.copy()
    s = arclengths(pts)
    total = s[-1]
    if total == 0:
        return pts[:1].copy()
    n = max(2, int(math.ceil(total / spacing)) + 1)
    t = np.linspace(0.0, total, n)
    return np.column_stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])])


def point_at(pts: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Point and unit tangent at arc length s along a polyline."""
    pts = np.asarray(pts, dtype=np.float64)
    cs = arclengths(pts)
    s = min(max(s, 0.0), cs[-1])
    i = int(np.searchsorted(cs, s, side="right")) - 1
    i = min(max(i, 0), len(pts) - 2)
    seg = pts[i + 1] - pts[i]
    ln = np.hypot(*seg)
    t = seg / ln if ln > 0 else np.array([1.0, 0.0])
    frac = (s - cs[i]) / (cs[i + 1] - cs[i]) if cs[i + 1] > cs[i] else 0.0
    return pts[i] + frac * (pts[i + 1] - pts[i]), t


def dedupe_points(pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 2:
        return pts.copy()
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) > tol:
            keep.append(i)
    return pts[keep]


def simplify(pts: np.ndarray, tol: float) -> np.ndarray:
    """Douglas-Peucker simplification."""
    pts = dedupe_points(pts)
    if len(pts) < 3 or tol <= 0:
        return pts
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        a, b = stack.pop()
        if b - a < 2:
            continue
        seg = pts[b] - pts[a]
        ln = np.hypot(*seg)
        mid = pts[a + 1:b]
        rel = mid - pts[a]
        if ln == 0:
            d = np.hypot(*rel.T)
        else:
            d = np.abs(seg[0] * rel[:, 1] - seg[1] * rel[:, 0]) / ln
        imax = int(np.argmax(d))
        if d[imax] > tol:
            k = a + 1 + imax
            keep[k] = True
            stack.extend([(a, k), (k, b)])
    return pts[keep]


# ---------------------------------------------------------------------------
# Constant-distance offsetting with arc joins
# ---------------------------------------------------------------------------

@dataclass
class OffsetResult:
    points: np.ndarray
    degenerate: bool = False  # a turn tighter than the offset radius was trimmed


def offset_polyline(points, d: float, chord_tol: float = 1.0) -> OffsetResult:
    """Offset a polyline by signed distance d along the +90-degree normal.

    Convex joints (offset on the outside of the turn) are connected with
    circular arcs flattened to at most chord_tol of chord error; concave
    joints are trimmed to the intersection of the adjacent offset lines.
    Turns tighter than |d| are flagged degenerate and joined directly.
    """
    pts = dedupe_points(points)
    if len(pts) < 2:
        raise ValueError("offset_polyline needs >= 2 distinct points")
    if d == 0.0:
        return OffsetResult(pts.copy(), False)

    vecs = pts[1:] - pts[:-1]
    lens = np.hypot(*vecs.T)
    units = vecs / lens[:, None]
    normals = np.column_stack([-units[:, 1], units[:, 0]])

    out: list[np.ndarray] = [pts[0] + d * normals[0]]
    degenerate = False
    for i in range(1, len(pts) - 1):
        u1, u2 = units[i - 1], units[i]
        n1, n2 = normals[i - 1], normals[i]
        a_end = pts[i] + d * n1
        b_start = pts[i] + d * n2
        z = u1[0] * u2[1] - u1[1] * u2[0]
        if abs(z) < 1e-12:
            if np.dot(u1, u2) < 0:  # spike: 180-degree turnback
                degenerate = True
                out.extend([a_end, b_start])
            else:
                out.append(a_end)
            continue
        if z * d < 0:
            # Offset lies outside the turn: join with an arc around the vertex.
            out.extend(_arc(pts[i], abs(d), a_end, b_start, chord_tol))
        else:
            # Inside: trim to the intersection of the two offset lines.
            x = _line_intersection(pts[i - 1] + d * n1, u1, pts[i] + d * n2, u2)
            t1 = np.dot(x - (pts[i - 1] + d * n1), u1)
            t2 = np.dot(x - (pts[i] + d * n2), u2)
            if 0.0 <= t1 <= lens[i - 1] and 0.0 <= t2 <= lens[i]:
                out.append(x)
            else:
                degenerate = True
                out.extend([a_end, b_start])
    out.append(pts[-1] + d * normals[-1])
    return OffsetResult(dedupe_points(np.asarray(out)), degenerate)


def _line_intersection(p1, u1, p2, u2) -> np.ndarray:
    z = u1[0] * u2[1] - u1[1] * u2[0]
    w = p2 - p1
    t = (w[0] * u2[1] - w[1] * u2[0]) / z
    return p1 + t * u1


def _arc(center, radius, start, end, chord_tol) -> list[np.ndarray]:
    a0 = math.atan2(start[1] - center[1], start[0] - center[0])
    a1 = math.atan2(end[1] - center[1], end[0] - center[0])
    sweep = math.radians(normalize_deg(math.degrees(a1 - a0)))
    if radius <= chord_tol:
        max_step = math.pi / 2
    else:
        max_step = 2 * math.acos(max(-1.0, 1.0 - chord_tol / radius))
    steps = max(1, int(math.ceil(abs(sweep) / max_step)))
    return [
        center + radius * np.array([math.cos(a0 + sweep * k / steps),
                                    math.sin(a0 + sweep * k / steps)])
        for k in range(steps + 1)
    ]


# ---------------------------------------------------------------------------
# Proper segment intersections
# ---------------------------------------------------------------------------

def proper_intersections(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Transversal intersection points between two polylines.

    Only strictly proper crossings count (interiors cross with opposite
    orientations); touching, collinear overlap, and shared endpoints do not.
    Returns an (k, 2) array of intersection points.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) < 2 or len(q) < 2:
        return np.empty((0, 2))
    a1, a2 = p[:-1], p[1:]
    b1, b2 = q[:-1], q[1:]
    pts: list[np.ndarray] = []
    chunk = 512
    for i0 in range(0, len(a1), chunk):
        A1 = a1[i0:i0 + chunk][:, None, :]
        A2 = a2[i0:i0 + chunk][:, None, :]
        B1 = b1[None, :, :]
        B2 = b2[None, :, :]
        d1 = _cross2(B2 - B1, A1 - B1)
        d2 = _cross2(B2 - B1, A2 - B1)
        d3 = _cross2(A2 - A1, B1 - A1)
        d4 = _cross2(A2 - A1, B2 - A1)
        mask = (d1 * d2 < 0) & (d3 * d4 < 0)
        ii, jj = np.nonzero(mask)
        for i, j in zip(ii, jj):
            t = d1[i, j] / (d1[i, j] - d2[i, j])
            pts.append(A1[i, 0] + t * (A2[i, 0] - A1[i, 0]))
    return np.asarray(pts) if pts else np.empty((0, 2))


def _cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def cluster_points(pts: np.ndarray, radius: float) -> np.ndarray:
    """Greedy clustering: representative points at least radius apart."""
    reps: list[np.ndarray] = []
    for p in pts:
        if all(np.hypot(*(p - r)) > radius for r in reps):
            reps.append(p)
    return np.asarray(reps) if reps else np.empty((0, 2))


def min_polyline_distance(p: np.ndarray, q: np.ndarray, spacing: float = 2.0) -> float:
    """Approximate minimum distance between two polylines by dense sampling."""
    from scipy.spatial import cKDTree

    ps = resample(p, spacing)
    qs = resample(q, spacing)
    d, _ = cKDTree(qs).query(ps)
    return float(d.min())
