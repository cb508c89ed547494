"""Route packing: shared-subpath detection, crossing-minimizing ranking,
perpendicular displacement, and the iterative layout pipeline.

Routes co-traversing a corridor are ordered by the angle at which each route
leaves the corridor: in a frame centered on the divergence vertex V_cur with
the previous corridor vertex V_pre rotated onto the positive x-axis, the
departure delta is the signed deviation from straight-ahead, positive toward
the corridor's perpendicular side.  A route's rank toward the perpendicular
side equals the number of pairwise comparisons it lost.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geom
from .model import RouteNetwork, Viewport
from .skeleton import (
    PrunedGraph,
    Skeleton,
    SkeletonCoverageError,
    binarize,
    build_pruned_graph,
    project_route_polyline,
    rasterize_kde,
    thin,
)
from .model import Projector


class OracleSizeError(RuntimeError):
    """The exhaustive crossing oracle was asked for an oversized instance."""


class TerminalRouteError(ValueError):
    """The route terminates at the divergence vertex; delta is undefined."""


@dataclass(frozen=True)
class PackParams:
    bandwidth: float = 4.0
    binarize_fraction: float = 0.1
    gap: float = 2.0
    max_bundle: float = 60.0
    max_iterations: int = 5
    transition_px: float = 12.0
    simplify_tol: float = 1.2
    default_width: float = 4.0
    widths: dict[str, float] | None = None
    seed: int = 0


@dataclass
class SharedSubpath:
    """A maximal corridor co-traversed by >= 2 routes.

    Segments and cruxes are ordered along the reference route (the
    lexicographically smallest participating id), which also defines the
    corridor's perpendicular axis.
    """

    segments: tuple[str, ...]
    routes: tuple[str, ...]                # sorted ids; routes[0] is reference
    seg_forward: dict[str, bool]           # stored pixel order == reference direction
    same_direction: dict[str, bool]        # per route, True if traveling with reference
    cruxes: tuple[str, ...]                # c0..cm along the reference direction

    @property
    def reference(self) -> str:
        return self.routes[0]


@dataclass(frozen=True)
class DivergenceFrame:
    """Frame at a corridor's divergence vertex.

    Angles are measured after rotating V_pre onto the positive x-axis and lie
    in (-180, 180].  The perpendicular direction is +90 degrees from the
    travel vector (V_cur - V_pre).
    """

    origin: tuple[float, float]
    base_angle: float  # angle of (V_pre - V_cur) before rotation

    @staticmethod
    def from_vertices(v_cur, v_pre) -> "DivergenceFrame":
        v = (v_pre[0] - v_cur[0], v_pre[1] - v_cur[1])
        return DivergenceFrame((float(v_cur[0]), float(v_cur[1])), geom.angle_deg(v))

    def angle_of(self, point) -> float:
        v = (point[0] - self.origin[0], point[1] - self.origin[1])
        return geom.normalize_deg(geom.angle_deg(v) - self.base_angle)


@dataclass
class RankAssignment:
    """Per-subpath route ranks; 0 is closest to the perpendicular side."""

    entries: list[tuple[SharedSubpath, dict[str, int]]] = field(default_factory=list)

    def rank(self, route_id: str, seg_id: str) -> int | None:
        for sp, ranks in self.entries:
            if route_id in ranks and seg_id in sp.segments:
                return ranks[route_id]
        return None


@dataclass
class Stroke:
    seg_id: str
    rank: int
    offset: float
    points: np.ndarray  # route travel order
    degenerate: bool = False


@dataclass
class RouteLayout:
    id: str
    width: float
    strokes: list[Stroke]
    stops: list[dict]
    color: str | None = None
    volumes: tuple[float, ...] | None = None

    def full_polyline(self) -> np.ndarray:
        pts = [s.points for s in self.strokes]
        if not pts:
            return np.empty((0, 2))
        out = [pts[0]]
        for p in pts[1:]:
            out.append(p[1:] if len(p) > 1 else p)
        return geom.dedupe_points(np.vstack(out))


@dataclass
class PackedLayout:
    viewport: Viewport
    routes: list[RouteLayout]
    residual: list[dict]
    crossings: int
    iterations: int


# ---------------------------------------------------------------------------
# Shared subpath detection
# ---------------------------------------------------------------------------

def find_shared_subpaths(pg: PrunedGraph) -> list[SharedSubpath]:
    """Maximal corridors of segments co-traversed by the same >= 2 routes."""
    seg_routes: dict[str, frozenset[str]] = {}
    for rid, chain in pg.route_chains.items():
        for sid, _ in chain:
            seg_routes.setdefault(sid, frozenset())
            seg_routes[sid] = seg_routes[sid] | {rid}

    subpaths: list[SharedSubpath] = []
    emitted: set[tuple] = set()
    for rid in sorted(pg.route_chains):
        chain = pg.route_chains[rid]
        i = 0
        while i < len(chain):
            rset = seg_routes[chain[i][0]]
            if len(rset) < 2 or min(rset) != rid:
                i += 1
                continue
            j = i
            while j + 1 < len(chain) and seg_routes[chain[j + 1][0]] == rset:
                j += 1
            run = chain[i:j + 1]
            key = (frozenset(s for s, _ in run), rset)
            if key not in emitted:
                emitted.add(key)
                subpaths.append(_make_subpath(run, rset, pg))
            i = j + 1
    return subpaths


def _make_subpath(run, rset, pg: PrunedGraph) -> SharedSubpath:
    segments = tuple(s for s, _ in run)
    seg_forward = {s: f for s, f in run}
    cruxes: list[str] = []
    for sid, fwd in run:
        seg = pg.segment_by_id[sid]
        enter, leave = (seg.crux_a, seg.crux_b) if fwd else (seg.crux_b, seg.crux_a)
        if not cruxes:
            cruxes.append(enter)
        cruxes.append(leave)
    routes = tuple(sorted(rset))
    same_direction: dict[str, bool] = {}
    for r in routes:
        flag = True
        for sid, fwd in pg.route_chains[r]:
            if sid == segments[0]:
                flag = fwd == seg_forward[segments[0]]
                break
        same_direction[r] = flag
    return SharedSubpath(segments, routes, seg_forward, same_direction, tuple(cruxes))


# ---------------------------------------------------------------------------
# Departure angles and ranking
# ---------------------------------------------------------------------------

def _route_run_bounds(sp: SharedSubpath, rid: str, pg: PrunedGraph) -> tuple[int, int]:
    chain = pg.route_chains[rid]
    idx = [k for k, (sid, _) in enumerate(chain) if sid in sp.segments]
    return min(idx), max(idx)


def departure_delta(sp: SharedSubpath, route_id: str, pg: PrunedGraph) -> float:
    """Signed departure deviation of a route at its divergence vertex.

    0 means the route continues straight ahead; +90 means it leaves exactly
    along the route's own perpendicular vector.  Raises TerminalRouteError if
    the route ends at the divergence vertex.
    """
    if route_id not in sp.routes:
        raise ValueError(f"route '{route_id}' does not participate in this subpath")
    forward = sp.same_direction[route_id]
    if forward:
        v_cur = pg.crux_by_id[sp.cruxes[-1]].pixel
        v_pre = pg.crux_by_id[sp.cruxes[-2]].pixel
    else:
        v_cur = pg.crux_by_id[sp.cruxes[0]].pixel
        v_pre = pg.crux_by_id[sp.cruxes[1]].pixel

    lo, hi = _route_run_bounds(sp, route_id, pg)
    chain = pg.route_chains[route_id]
    # The route's own traversal exits the corridor at the end of its run.
    nxt_idx = hi + 1 if hi + 1 < len(chain) else None
    if nxt_idx is None:
        raise TerminalRouteError(f"route '{route_id}' terminates at the divergence vertex")
    nxt_sid, nxt_fwd = chain[nxt_idx]
    nxt_seg = pg.segment_by_id[nxt_sid]
    far_crux = nxt_seg.crux_b if nxt_fwd else nxt_seg.crux_a
    nxt_pt = pg.crux_by_id[far_crux].pixel
    if math.hypot(nxt_pt[0] - v_cur[0], nxt_pt[1] - v_cur[1]) < 1e-9:
        raise TerminalRouteError(f"route '{route_id}' has no departure direction")
    frame = DivergenceFrame.from_vertices(v_cur, v_pre)
    phi = frame.angle_of(nxt_pt)
    return geom.normalize_deg(phi - 180.0)


def corridor_delta(sp: SharedSubpath, route_id: str, pg: PrunedGraph) -> float:
    """Departure delta mapped onto the corridor's shared perpendicular axis.

    Routes traveling against the reference have an opposite perpendicular,
    so their delta flips sign.  Terminal routes get 0 (treated as straight).
    """
    try:
        delta = departure_delta(sp, route_id, pg)
    except TerminalRouteError:
        return 0.0
    return delta if sp.same_direction[route_id] else -delta


def rank_routes(subpaths: list[SharedSubpath], pg: PrunedGraph) -> RankAssignment:
    """Pairwise comparison per corridor: the larger delta wins the
    perpendicular side; rank equals the number of losses.  Ties break by
    lexicographic route id (smaller id wins)."""
    assignment = RankAssignment()
    for sp in subpaths:
        deltas = {r: corridor_delta(sp, r, pg) for r in sp.routes}
        ranks: dict[str, int] = {}
        for r in sp.routes:
            losses = 0
            for o in sp.routes:
                if o == r:
                    continue
                if deltas[o] > deltas[r] or (deltas[o] == deltas[r] and o < r):
                    losses += 1
            ranks[r] = losses
        assignment.entries.append((sp, ranks))
    return assignment


# ---------------------------------------------------------------------------
# Offsets
# ---------------------------------------------------------------------------

def compute_offsets(
    ranks: RankAssignment,
    widths: dict[str, float],
    gap: float,
    max_bundle: float = 60.0,
) -> tuple[dict[tuple[str, str], float], list[dict]]:
    """Signed perpendicular offsets per (route, segment).

    Routes stack in rank order along the corridor perpendicular (rank 0 most
    positive); adjacent centerline spacing is (w_i + w_j)/2 + gap, and the
    bundle is centered so its width-weighted midpoint sits at offset 0.
    """
    if gap < 0:
        raise ValueError("gap must be >= 0")
    offsets: dict[tuple[str, str], float] = {}
    warnings: list[dict] = []
    for sp, rk in ranks.entries:
        order = sorted(sp.routes, key=lambda r: rk[r])
        pos = [0.0]
        for a, b in zip(order[:-1], order[1:]):
            if widths[a] <= 0 or widths[b] <= 0:
                raise ValueError("widths must be positive")
            pos.append(pos[-1] - ((widths[a] + widths[b]) / 2.0 + gap))
        total_w = sum(widths[r] for r in order)
        shift = -sum(widths[r] * p for r, p in zip(order, pos)) / total_w
        placed = {r: p + shift for r, p in zip(order, pos)}
        envelope = (max(placed[r] + widths[r] / 2 for r in order)
                    - min(placed[r] - widths[r] / 2 for r in order))
        if envelope > max_bundle:
            warnings.append({
                "type": "over-dense",
                "segments": list(sp.segments),
                "routes": list(sp.routes),
                "bundleWidth": round(envelope, 2),
            })
        for r in order:
            for sid in sp.segments:
                offsets[(r, sid)] = placed[r]
    return offsets, warnings


# Re-exported op: constant-distance offsetting lives in geom.
offset_polyline = geom.offset_polyline


# ---------------------------------------------------------------------------
# Layout assembly
# ---------------------------------------------------------------------------

def _assemble_routes(
    pg: PrunedGraph,
    subpaths: list[SharedSubpath],
    offsets: dict[tuple[str, str], float],
    widths: dict[str, float],
    params: PackParams,
) -> list[RouteLayout]:
    ref_orient: dict[str, bool] = {}
    for sp in subpaths:
        ref_orient.update(sp.seg_forward)

    # Corridor-frame offsets already placed per segment, so a second
    # traversal of a segment (an out-and-back over a merged corridor) can be
    # moved to a free lane instead of landing on another route's.
    occupied: dict[str, list[tuple[float, float]]] = {}

    routes: list[RouteLayout] = []
    for rid in sorted(pg.route_chains):
        width = widths.get(rid, params.default_width)
        strokes: list[Stroke] = []
        for sid, fwd in pg.route_chains[rid]:
            seg = pg.segment_by_id[sid]
            base = geom.simplify(seg.pixels, params.simplify_tol)
            corridor_offset = offsets.get((rid, sid), 0.0)
            corridor_offset = _free_lane(occupied.setdefault(sid, []),
                                         corridor_offset, width, params.gap)
            occupied[sid].append((corridor_offset, width))
            seg_fwd_ref = ref_orient.get(sid, True)
            # The offset is signed along the reference orientation; flip it
            # when this route travels the segment the other way.
            d = corridor_offset if fwd == seg_fwd_ref else -corridor_offset
            pts = base if fwd else base[::-1]
            if len(geom.dedupe_points(pts)) < 2:
                continue
            # Tight chord tolerance: arc flattening eats into the clearance
            # between neighboring strokes, which is budgeted to half a pixel.
            res = geom.offset_polyline(pts, d, chord_tol=0.2) if d != 0.0 else \
                geom.OffsetResult(geom.dedupe_points(pts), False)
            if d != 0.0 and (res.degenerate or not _in_lane(res.points, pts, d)):
                # Mitered offsets can hook back into the lane band on tight
                # or staircase corners; a dense per-point normal displacement
                # with fold clipping stays within its own lane everywhere.
                res = geom.OffsetResult(_dense_offset(pts, d), res.degenerate)
            rank = _rank_of(subpaths, offsets, rid, sid)
            strokes.append(Stroke(sid, rank, d, res.points, res.degenerate))
        _blend_transitions(strokes, params.transition_px)
        routes.append(RouteLayout(rid, widths.get(rid, params.default_width),
                                  strokes, _stops_for(rid, pg)))
    return routes


def _free_lane(occupied: list[tuple[float, float]], d: float, width: float,
               gap: float) -> float:
    """Nearest collision-free corridor offset for a stroke of this width."""
    def clear(cand: float) -> bool:
        return all(abs(cand - o) >= (width + w) / 2.0 + gap - 1e-6
                   for o, w in occupied)

    if clear(d):
        return d
    lo = min(o - (width + w) / 2.0 - gap for o, w in occupied)
    hi = max(o + (width + w) / 2.0 + gap for o, w in occupied)
    candidates = [c for c in (lo, hi) if clear(c)]
    return min(candidates, key=lambda c: abs(c - d)) if candidates else hi


def _in_lane(out: np.ndarray, base: np.ndarray, d: float) -> bool:
    """True when every offset point keeps roughly |d| clearance to the base."""
    dense = geom.resample(geom.dedupe_points(base), 2.0)
    dist, _ = cKDTree(dense).query(geom.resample(out, 2.0))
    return bool((dist >= abs(d) - 0.3).all())


def _dense_offset(pts: np.ndarray, d: float, spacing: float = 2.0) -> np.ndarray:
    """Offset by moving each densely resampled point along its local normal.

    Points that land closer than |d| to the centerline sit on a
    self-intersection loop of a turn tighter than |d| and are clipped out, so
    the result stays inside its own lane band.
    """
    dense = geom.resample(geom.dedupe_points(pts), spacing)
    tangents = np.gradient(dense, axis=0)
    norms = np.hypot(*tangents.T)
    norms[norms == 0] = 1.0
    tangents /= norms[:, None]
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    out = dense + d * normals
    dist, _ = cKDTree(dense).query(out)
    keep = dist >= abs(d) - 0.3
    keep[0] = keep[-1] = True
    return out[keep]


def _rank_of(subpaths, offsets, rid, sid) -> int:
    for sp in subpaths:
        if sid in sp.segments and rid in sp.routes:
            order = sorted(sp.routes,
                           key=lambda r: -offsets.get((r, sid), 0.0))
            return order.index(rid)
    return 0


def _stops_for(rid: str, pg: PrunedGraph) -> list[dict]:
    stops: list[dict] = []
    for crux in pg.cruxes:
        for vid in crux.source_vertices:
            stops.append({"vertexId": vid, "x": crux.pixel[0], "y": crux.pixel[1]})
    return stops


def _blend_transitions(strokes: list[Stroke], window: float) -> None:
    """Join consecutive strokes by fading their ends to a shared joint point."""
    for a, b in zip(strokes[:-1], strokes[1:]):
        if len(a.points) < 2 or len(b.points) < 2:
            continue
        end_a, start_b = a.points[-1], b.points[0]
        span = np.hypot(*(end_a - start_b))
        if span < 1e-9:
            continue
        if span > 2.0 * window:
            # A gap this wide is a chain discontinuity, not a lane change;
            # fading would drag the stroke across neighboring lanes, so the
            # connector is left as a plain jump between the strokes.
            continue
        joint = (end_a + start_b) / 2.0
        a.points = _fade_end(a.points, joint, window, at_end=True)
        b.points = _fade_end(b.points, joint, window, at_end=False)


def _fade_end(pts: np.ndarray, joint: np.ndarray, window: float, at_end: bool) -> np.ndarray:
    # Simplified polylines have sparse vertices, so fading vertex positions
    # alone would tilt whole spans; pin the blend at the window boundary by
    # inserting a vertex there first.
    pts = _split_at(pts, window, at_end)
    s = geom.arclengths(pts)
    total = s[-1]
    if total == 0:
        return pts
    dist_from = (total - s) if at_end else s
    w = np.clip(1.0 - dist_from / window, 0.0, 1.0)
    shift = joint - (pts[-1] if at_end else pts[0])
    return pts + w[:, None] * shift[None, :]


def _split_at(pts: np.ndarray, window: float, at_end: bool) -> np.ndarray:
    s = geom.arclengths(pts)
    total = s[-1]
    if total <= window:
        return pts
    target = total - window if at_end else window
    if np.min(np.abs(s - target)) < 1e-6:
        return pts
    i = int(np.searchsorted(s, target))
    t = (target - s[i - 1]) / (s[i] - s[i - 1])
    p = pts[i - 1] + t * (pts[i] - pts[i - 1])
    return np.insert(pts, i, p, axis=0)


# ---------------------------------------------------------------------------
# Crossing metric and exhaustive oracle
# ---------------------------------------------------------------------------

def count_crossings(layout: PackedLayout, endpoint_radius: float = 1.5) -> int:
    """Transversal crossings between displaced polylines of distinct routes.

    Excludes touches at coincident stop endpoints (within endpoint_radius of
    either polyline's termini); parallel corridor proximity never produces a
    proper crossing and is excluded by construction.
    """
    polys = [(rl.id, geom.simplify(rl.full_polyline(), 0.25)) for rl in layout.routes]
    total = 0
    for (ida, pa), (idb, pb) in itertools.combinations(polys, 2):
        if len(pa) < 2 or len(pb) < 2:
            continue
        pts = geom.proper_intersections(pa, pb)
        if len(pts) == 0:
            continue
        termini = np.array([pa[0], pa[-1], pb[0], pb[-1]])
        keep = []
        for p in pts:
            if np.hypot(*(termini - p).T).min() > endpoint_radius:
                keep.append(p)
        if keep:
            total += len(geom.cluster_points(np.asarray(keep), 1.0))
    return total


def layout_from_ranks(
    pg: PrunedGraph,
    subpaths: list[SharedSubpath],
    rank_entries: list[tuple[SharedSubpath, dict[str, int]]],
    widths: dict[str, float],
    vp: Viewport,
    params: PackParams,
) -> tuple[PackedLayout, list[dict]]:
    ranks = RankAssignment(rank_entries)
    offsets, warnings = compute_offsets(ranks, widths, params.gap, params.max_bundle)
    routes = _assemble_routes(pg, subpaths, offsets, widths, params)
    layout = PackedLayout(vp, routes, [], 0, 1)
    layout.crossings = count_crossings(layout)
    return layout, warnings


def brute_force_min_crossings(
    subpaths: list[SharedSubpath],
    pg: PrunedGraph,
    widths: dict[str, float],
    vp: Viewport,
    params: PackParams,
    max_routes: int = 7,
    max_combinations: int = 20000,
) -> int:
    """Minimum of count_crossings over all per-subpath rank permutations."""
    if not subpaths:
        return 0
    combos = 1
    for sp in subpaths:
        if len(sp.routes) > max_routes:
            raise OracleSizeError(
                f"subpath with {len(sp.routes)} routes exceeds oracle limit {max_routes}")
        combos *= math.factorial(len(sp.routes))
    if combos > max_combinations:
        raise OracleSizeError(f"{combos} permutations exceed oracle limit {max_combinations}")

    best = None
    perm_sets = [list(itertools.permutations(sp.routes)) for sp in subpaths]
    for choice in itertools.product(*perm_sets):
        entries = [(sp, {r: k for k, r in enumerate(perm)})
                   for sp, perm in zip(subpaths, choice)]
        layout, _ = layout_from_ranks(pg, subpaths, entries, widths, vp, params)
        if best is None or layout.crossings < best:
            best = layout.crossings
            if best == 0:
                break
    return best if best is not None else 0


# ---------------------------------------------------------------------------
# Residual overlap detection
# ---------------------------------------------------------------------------

def _detect_residual(
    routes: list[RouteLayout],
    pg: PrunedGraph,
    subpaths: list[SharedSubpath],
    widths: dict[str, float],
    gap: float,
    exclusion_radius: float = 18.0,
) -> list[dict]:
    copacked: set[tuple[str, str, str]] = set()
    for sp in subpaths:
        for sid in sp.segments:
            for a, b in itertools.combinations(sp.routes, 2):
                copacked.add((a, b, sid))
    # Junction zones extend over whole crux clusters, not just their
    # representative pixels.
    crux_pts = np.array([px for c in pg.cruxes for px in sorted(c.pixels)],
                        dtype=np.float64) if pg.cruxes else np.empty((0, 2))
    crux_tree = cKDTree(crux_pts) if len(crux_pts) else None

    # Resample every stroke once (away from junction zones) up front.
    samples: dict[int, np.ndarray | None] = {}
    sample_trees: dict[int, cKDTree] = {}

    def _samples_of(stroke) -> np.ndarray | None:
        key = id(stroke)
        if key not in samples:
            pts = None
            if len(stroke.points) >= 2:
                pts = geom.resample(stroke.points, 2.0)
                if crux_tree is not None:
                    d, _ = crux_tree.query(pts)
                    pts = pts[d > exclusion_radius]
                if len(pts) == 0:
                    pts = None
            samples[key] = pts
            if pts is not None:
                sample_trees[key] = cKDTree(pts)
        return samples[key]

    residual: list[dict] = []
    by_route = {rl.id: rl for rl in routes}
    for ra, rb in itertools.combinations(sorted(by_route), 2):
        need = (widths[ra] + widths[rb]) / 2.0 + gap - 0.5
        for sa in by_route[ra].strokes:
            pa = _samples_of(sa)
            if pa is None:
                continue
            for sb in by_route[rb].strokes:
                pair = (min(ra, rb), max(ra, rb), sa.seg_id)
                if sa.seg_id == sb.seg_id and pair in copacked:
                    continue
                pb = _samples_of(sb)
                if pb is None:
                    continue
                d, j = sample_trees[id(sb)].query(pa)
                k = int(np.argmin(d))
                dmin = float(d[k])
                if dmin >= need:
                    continue
                # A transversal crossing also has a near-zero closest
                # approach, but it is a crossing (counted separately), not a
                # packing overlap; only near-parallel proximity counts here.
                if _tangent_angle(pa, k, pb, int(j[k])) > 15.0:
                    continue
                residual.append({
                    "type": "overlap", "routeA": ra, "routeB": rb,
                    "segA": sa.seg_id, "segB": sb.seg_id,
                    "minDistance": round(dmin, 2), "required": round(need, 2),
                })
    return residual


def _tangent_angle(pa: np.ndarray, i: int, pb: np.ndarray, j: int) -> float:
    """Acute angle in degrees between local tangents of two sample chains."""
    ta = pa[min(i + 1, len(pa) - 1)] - pa[max(i - 1, 0)]
    tb = pb[min(j + 1, len(pb) - 1)] - pb[max(j - 1, 0)]
    na, nb = np.hypot(*ta), np.hypot(*tb)
    if na == 0 or nb == 0:
        return 0.0
    cos = abs(float(np.dot(ta, tb))) / (na * nb)
    return math.degrees(math.acos(min(1.0, cos)))


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def route_widths(net: RouteNetwork, params: PackParams) -> dict[str, float]:
    """Per-route packing width: explicit widths, else the default."""
    widths = dict(params.widths or {})
    for r in net.routes:
        widths.setdefault(r.id, params.default_width)
    return widths


def pack(net: RouteNetwork, vp: Viewport, params: PackParams | None = None) -> PackedLayout:
    """Iteratively skeletonize, detect shared corridors, rank, and displace.

    Repeats detection on the displaced geometry until no residual overlap
    remains or max_iterations is reached; non-convergence is reported in the
    residual list, not raised.
    """
    params = params or PackParams()
    widths = route_widths(net, params)
    proj = Projector(vp)
    polylines = {r.id: project_route_polyline(r.id, net, proj) for r in net.routes}

    routes: list[RouteLayout] = []
    residual: list[dict] = []
    best: tuple[int, int, list[RouteLayout], list[dict]] | None = None
    snap_slack = 0.0
    for iteration in range(1, params.max_iterations + 1):
        try:
            grid = rasterize_kde(list(polylines.values()), params.bandwidth, vp)
            sk = Skeleton.from_image(thin(binarize(grid, params.binarize_fraction)))
            pg = build_pruned_graph(sk, net, vp, params.bandwidth,
                                    route_polylines=polylines,
                                    binarize_fraction=params.binarize_fraction,
                                    snap_slack=snap_slack)
        except SkeletonCoverageError:
            if best is None:
                raise
            # Displaced geometry drifted too far from the stops to re-detect;
            # keep the best layout found so far.
            break
        subpaths = find_shared_subpaths(pg)
        ranks = rank_routes(subpaths, pg)
        offsets, warnings = compute_offsets(ranks, widths, params.gap, params.max_bundle)
        routes = _assemble_routes(pg, subpaths, offsets, widths, params)
        overlaps = _detect_residual(routes, pg, subpaths, widths, params.gap)
        residual = overlaps + warnings
        if best is None or len(overlaps) < best[0]:
            best = (len(overlaps), iteration, routes, residual)
            stale = 0
        else:
            # One non-improving pass is tolerated: the re-skeletonized
            # displaced geometry sometimes plateaus before it settles.
            stale += 1
            if stale >= 2:
                break
        if not overlaps:
            break
        polylines = {rl.id: rl.full_polyline() for rl in routes}
        snap_slack = max((abs(s.offset) for rl in routes for s in rl.strokes),
                         default=0.0)
    assert best is not None
    _, iteration, routes, residual = best

    for rl in routes:
        route = next(r for r in net.routes if r.id == rl.id)
        rl.volumes = route.volumes
        for stop in rl.stops[:]:
            if stop["vertexId"] not in route.stops:
                rl.stops.remove(stop)
            else:
                label = net.vertex_by_id[stop["vertexId"]].label
                if label:
                    stop["label"] = label
        rl.stops.sort(key=lambda s: route.stops.index(s["vertexId"]))

    layout = PackedLayout(vp, routes, residual, 0, iteration)
    layout.crossings = count_crossings(layout)
    return layout


# ---------------------------------------------------------------------------
# Layout JSON interface
# ---------------------------------------------------------------------------

def layout_to_json(layout: PackedLayout) -> str:
    doc = {
        "viewport": {
            "width": layout.viewport.width,
            "height": layout.viewport.height,
            "bounds": list(layout.viewport.bounds),
            "padding": layout.viewport.padding,
        },
        "routes": [
            {
                **({"id": rl.id, "widthPx": rl.width}),
                **({"color": rl.color} if rl.color else {}),
                **({"volumes": list(rl.volumes)} if rl.volumes else {}),
                "strokes": [
                    {"segId": s.seg_id, "rank": s.rank, "offsetPx": round(s.offset, 3),
                     "points": [[round(float(x), 2), round(float(y), 2)]
                                for x, y in s.points]}
                    for s in rl.strokes
                ],
                "stops": rl.stops,
            }
            for rl in layout.routes
        ],
        "residual": layout.residual,
        "crossings": layout.crossings,
        "iterations": layout.iterations,
    }
    return json.dumps(doc, indent=1)


def layout_from_json(text: str | bytes) -> PackedLayout:
    doc = json.loads(text)
    vp_doc = doc["viewport"]
    vp = Viewport(vp_doc["width"], vp_doc["height"],
                  tuple(vp_doc["bounds"]), vp_doc.get("padding", 0.0))
    routes = []
    for rd in doc["routes"]:
        strokes = [
            Stroke(sd["segId"], sd["rank"], sd["offsetPx"],
                   np.asarray(sd["points"], dtype=np.float64))
            for sd in rd["strokes"]
        ]
        routes.append(RouteLayout(
            rd["id"], rd.get("widthPx", 4.0), strokes, rd.get("stops", []),
            rd.get("color"), tuple(rd["volumes"]) if rd.get("volumes") else None))
    return PackedLayout(vp, routes, doc.get("residual", []),
                        doc.get("crossings", 0), doc.get("iterations", 1))
