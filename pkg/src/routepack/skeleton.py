"""Raster skeleton extraction for route geometry.

Pipeline: line-density rasterization (truncated Gaussian kernel of exact
point-to-polyline distance), thresholding to a binary image, Zhang-Suen
thinning to a 1-px skeleton, crossing-number classification of bifurcations
and endpoints, and construction of a pruned graph of crucial vertices and
corridor segments with route incidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .model import Projector, RouteNetwork, Viewport, route_chain

_EIGHT = np.ones((3, 3), dtype=int)  # 8-connectivity structuring element


class SkeletonCoverageError(RuntimeError):
    """A route edge or stop has no skeleton pixels nearby."""


@dataclass
class DensityGrid:
    width: int
    height: int
    cells: np.ndarray  # (height, width) float64, >= 0
    bandwidth: float

    @property
    def peak(self) -> float:
        # Kernel amplitude at distance 0: the single-line on-line density.
        return 1.0


@dataclass
class BinaryImage:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool


@dataclass
class Skeleton:
    image: BinaryImage
    bifurcations: set[tuple[int, int]]  # (x, y) pixels with crossing number 3
    endpoints: set[tuple[int, int]]     # crossing number 1

    @staticmethod
    def from_image(img: BinaryImage) -> "Skeleton":
        bifs, ends = detect_bifurcations(img)
        return Skeleton(img, bifs, ends)


@dataclass(frozen=True)
class Crux:
    id: str
    pixel: tuple[float, float]          # representative (x, y)
    pixels: frozenset[tuple[int, int]]  # all skeleton pixels of this vertex
    source_vertices: tuple[str, ...] = ()


@dataclass
class SegmentChain:
    id: str
    pixels: np.ndarray  # (n, 2) ordered (x, y), crux_a end first
    crux_a: str
    crux_b: str


@dataclass
class PrunedGraph:
    cruxes: list[Crux]
    segments: list[SegmentChain]
    incidence: dict[str, list[str]]                 # edge id -> segment ids
    route_chains: dict[str, list[tuple[str, bool]]]  # route id -> [(seg, forward)]
    crux_by_id: dict[str, Crux] = field(default_factory=dict)
    segment_by_id: dict[str, SegmentChain] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.crux_by_id = {c.id: c for c in self.cruxes}
        self.segment_by_id = {s.id: s for s in self.segments}


# ---------------------------------------------------------------------------
# Kernel density rasterization
# ---------------------------------------------------------------------------

def rasterize_kde(polylines, bandwidth: float, vp: Viewport) -> DensityGrid:
    """Rasterize polylines into a density grid (1 cell = 1 px).

    Each cell holds the sum over polylines of exp(-d^2 / 2*bw^2) where d is
    the exact distance from the cell center to the polyline, truncated at
    3*bandwidth.  Linear in the polyline set by construction.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    w, h = int(round(vp.width)), int(round(vp.height))
    cells = np.zeros((h, w), dtype=np.float64)
    reach = 3.0 * bandwidth
    for line in polylines:
        pts = np.asarray(line, dtype=np.float64)
        if len(pts) < 2:
            continue
        # Min distance to this polyline over the cells near its bbox.
        x0 = max(0, int(math.floor(pts[:, 0].min() - reach - 1)))
        x1 = min(w, int(math.ceil(pts[:, 0].max() + reach + 2)))
        y0 = max(0, int(math.floor(pts[:, 1].min() - reach - 1)))
        y1 = min(h, int(math.ceil(pts[:, 1].max() + reach + 2)))
        if x0 >= x1 or y0 >= y1:
            continue
        dist = np.full((y1 - y0, x1 - x0), np.inf)
        cx = np.arange(x0, x1) + 0.5
        cy = np.arange(y0, y1) + 0.5
        for a, b in zip(pts[:-1], pts[1:]):
            sx0 = max(x0, int(math.floor(min(a[0], b[0]) - reach - 1)))
            sx1 = min(x1, int(math.ceil(max(a[0], b[0]) + reach + 2)))
            sy0 = max(y0, int(math.floor(min(a[1], b[1]) - reach - 1)))
            sy1 = min(y1, int(math.ceil(max(a[1], b[1]) + reach + 2)))
            if sx0 >= sx1 or sy0 >= sy1:
                continue
            gx = cx[sx0 - x0:sx1 - x0][None, :]
            gy = cy[sy0 - y0:sy1 - y0][:, None]
            d = _point_segment_distance(gx, gy, a, b)
            sub = dist[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0]
            np.minimum(sub, d, out=sub)
        contrib = np.where(dist <= reach,
                           np.exp(-0.5 * (dist / bandwidth) ** 2), 0.0)
        cells[y0:y1, x0:x1] += contrib
    return DensityGrid(w, h, cells, bandwidth)


def _point_segment_distance(gx, gy, a, b):
    vx, vy = b[0] - a[0], b[1] - a[1]
    ln2 = vx * vx + vy * vy
    if ln2 == 0.0:
        return np.hypot(gx - a[0], gy - a[1])
    t = ((gx - a[0]) * vx + (gy - a[1]) * vy) / ln2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(gx - (a[0] + t * vx), gy - (a[1] + t * vy))


def binarize(grid: DensityGrid, fraction: float) -> BinaryImage:
    """Threshold at fraction * (peak single-line density)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    return BinaryImage(grid.width, grid.height, grid.cells >= fraction * grid.peak)


# ---------------------------------------------------------------------------
# Zhang-Suen thinning
# ---------------------------------------------------------------------------

def _neighbors(a: np.ndarray):
    """Return P2..P9: the 8 neighbors clockwise from north, as shifted views."""
    p = np.pad(a, 1)
    p2 = p[:-2, 1:-1]   # N
    p3 = p[:-2, 2:]     # NE
    p4 = p[1:-1, 2:]    # E
    p5 = p[2:, 2:]      # SE
    p6 = p[2:, 1:-1]    # S
    p7 = p[2:, :-2]     # SW
    p8 = p[1:-1, :-2]   # W
    p9 = p[:-2, :-2]    # NW
    return p2, p3, p4, p5, p6, p7, p8, p9


def thin(img: BinaryImage) -> BinaryImage:
    """Two-subiteration Zhang-Suen thinning, iterated to fixpoint.

    A set pixel is deleted in subiteration 1 iff 2 <= B <= 6, A == 1,
    P2*P4*P6 == 0 and P4*P6*P8 == 0; subiteration 2 swaps the last two
    conditions for P2*P4*P8 == 0 and P2*P6*P8 == 0.
    """
    full = img.bits.astype(np.uint8)
    ys, xs = np.nonzero(full)
    if len(xs) == 0:
        return BinaryImage(img.width, img.height, full.astype(bool))
    # Work on the tight bounding box; most of the canvas is empty.
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    a = full[y0:y1, x0:x1].copy()
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            nb = _neighbors(a)
            b_count = np.sum(np.stack(nb), axis=0)
            seq = list(nb) + [nb[0]]
            a_count = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.uint8)
                          for k in range(8))
            p2, _, p4, _, p6, _, p8, _ = nb
            if step == 0:
                c3 = (p2 * p4 * p6) == 0
                c4 = (p4 * p6 * p8) == 0
            else:
                c3 = (p2 * p4 * p8) == 0
                c4 = (p2 * p6 * p8) == 0
            kill = (a == 1) & (b_count >= 2) & (b_count <= 6) & (a_count == 1) & c3 & c4
            if kill.any():
                a[kill] = 0
                changed = True
    out = np.zeros_like(full)
    out[y0:y1, x0:x1] = a
    return BinaryImage(img.width, img.height, out.astype(bool))


# ---------------------------------------------------------------------------
# Crossing-number classification
# ---------------------------------------------------------------------------

def crossing_number_map(img: BinaryImage) -> np.ndarray:
    """CN(p) = 1/2 * sum |P_i - P_{i+1}| over the cyclic 8-neighborhood."""
    a = img.bits.astype(np.int8)
    nb = _neighbors(a)
    seq = list(nb) + [nb[0]]
    cn = sum(np.abs(seq[k + 1].astype(np.int16) - seq[k].astype(np.int16))
             for k in range(8))
    return np.where(img.bits, cn // 2, 0)


def detect_bifurcations(sk: BinaryImage) -> tuple[set[tuple[int, int]], set[tuple[int, int]]]:
    """Classify thinned pixels by crossing number: CN 3 bifurcation, CN 1 endpoint."""
    cn = crossing_number_map(sk)
    bif = {(int(x), int(y)) for y, x in zip(*np.nonzero(cn == 3))}
    end = {(int(x), int(y)) for y, x in zip(*np.nonzero(cn == 1))}
    return bif, end


# ---------------------------------------------------------------------------
# Pruned graph construction
# ---------------------------------------------------------------------------

def project_route_polyline(route_id: str, net: RouteNetwork, proj: Projector) -> np.ndarray:
    """Concatenated projected geometry of a route's path, oriented along its chain."""
    route = next(r for r in net.routes if r.id == route_id)
    chain, _ = route_chain(route, net)
    pts: list[tuple[float, float]] = []
    for i, eid in enumerate(route.path):
        edge = net.edge_by_id[eid]
        geom = edge.geometry if edge.frm == chain[i] else edge.geometry[::-1]
        screen = [proj.project(p) for p in geom]
        if pts:
            screen = screen[1:]
        pts.extend(screen)
    return np.asarray(pts)


def _resample(pts: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline at roughly uniform arc-length spacing."""
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.hypot(*(pts[1:] - pts[:-1]).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0:
        return pts[:1]
    n = max(2, int(math.ceil(total / spacing)) + 1)
    targets = np.linspace(0.0, total, n)
    x = np.interp(targets, s, pts[:, 0])
    y = np.interp(targets, s, pts[:, 1])
    return np.column_stack([x, y])


def band_half_width(bandwidth: float, fraction: float) -> float:
    """Half-width of the binarized band around a single line."""
    return bandwidth * math.sqrt(2.0 * math.log(1.0 / fraction))


def build_pruned_graph(
    sk: Skeleton,
    net: RouteNetwork,
    vp: Viewport,
    bandwidth: float = 4.0,
    route_polylines: dict[str, np.ndarray] | None = None,
    binarize_fraction: float = 0.1,
    snap_slack: float = 0.0,
) -> PrunedGraph:
    """Build crucial vertices and corridor segments from a skeleton.

    Crucial vertices are bifurcations (CN >= 3), endpoints, and the skeleton
    pixels nearest to route stops (snapped within 2*bandwidth).  Segments are
    the maximal skeleton chains between crucial vertices.  Each route edge is
    assigned the segment chain nearest its projected geometry.
    """
    bits = sk.image.bits
    ys, xs = np.nonzero(bits)
    if len(xs) == 0:
        raise SkeletonCoverageError("skeleton is empty")
    pixels = np.column_stack([xs, ys])
    tree = cKDTree(pixels)

    proj = Projector(vp)
    if route_polylines is None:
        route_polylines = {r.id: project_route_polyline(r.id, net, proj) for r in net.routes}

    cn = crossing_number_map(sk.image)
    crucial = np.zeros_like(bits)
    crucial[(cn >= 3) | (cn == 1)] = True
    # Junction pixels the crossing number misses (branches meeting only
    # diagonally) still have reduced degree >= 3.
    for x, y in zip(*[c.tolist() for c in np.nonzero(bits)[::-1]]):
        if not crucial[y, x] and len(_px_neighbors(bits, x, y)) >= 3:
            crucial[y, x] = True

    # Snap every route stop to its nearest skeleton pixel.  Thinning retracts
    # the skeleton of a thick band inward from its open ends by up to the
    # band half-width, so the tolerance must absorb that retraction.
    # Merged bands are denser than a single line, which pushes the threshold
    # crossing (and hence the retraction) outward; 3*bandwidth of headroom
    # absorbs the densest plausible merge.
    # snap_slack widens the search when the rasterized geometry is known to
    # be displaced from the stop positions (later packing iterations).
    snap_tol = 3.0 * bandwidth + band_half_width(bandwidth, binarize_fraction) \
        + snap_slack
    stop_sources: dict[tuple[int, int], list[str]] = {}
    for r in net.routes:
        for vid in r.stops:
            sp = proj.project(net.vertex_by_id[vid].position)
            d, idx = tree.query(sp)
            if d > snap_tol:
                raise SkeletonCoverageError(
                    f"stop '{vid}' is {d:.1f}px from the skeleton (tolerance {snap_tol:.1f})")
            px = (int(pixels[idx][0]), int(pixels[idx][1]))
            crucial[px[1], px[0]] = True
            stop_sources.setdefault(px, [])
            if vid not in stop_sources[px]:
                stop_sources[px].append(vid)

    crucial &= bits
    cruxes, owner = _cluster_cruxes(crucial, stop_sources)

    segments = _trace_segments(bits, crucial, cruxes, owner)
    cruxes, segments = _prune_graph(
        cruxes, segments, 2.0 * band_half_width(bandwidth, binarize_fraction))
    seg_owner: dict[tuple[int, int], str] = {}
    for s in segments:
        for x, y in s.pixels:
            px = (int(x), int(y))
            if px not in owner:  # crux pixels keep crux ownership
                seg_owner[px] = s.id

    incidence, route_chains = _map_routes(
        net, route_polylines, tree, pixels, owner, seg_owner,
        {s.id: s for s in segments}, snap_tol, cruxes)
    return PrunedGraph(cruxes, segments, incidence, route_chains)


def _cluster_cruxes(crucial: np.ndarray, stop_sources) -> tuple[list[Crux], dict]:
    labels, n = ndimage.label(crucial, structure=_EIGHT)
    cruxes: list[Crux] = []
    owner: dict[tuple[int, int], str] = {}
    for k in range(1, n + 1):
        ys, xs = np.nonzero(labels == k)
        pts = list(zip(xs.tolist(), ys.tolist()))
        cid = f"c{k - 1}"
        cx, cy = float(np.mean(xs)), float(np.mean(ys))
        rep = min(pts, key=lambda p: (p[0] - cx) ** 2 + (p[1] - cy) ** 2)
        sources: list[str] = []
        for p in pts:
            sources.extend(stop_sources.get(p, []))
        cruxes.append(Crux(cid, (float(rep[0]), float(rep[1])),
                           frozenset(pts), tuple(sorted(set(sources)))))
        for p in pts:
            owner[p] = cid
    return cruxes, owner


def _neighbors8(x: int, y: int, h: int, w: int):
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h:
                yield nx, ny


def _px_neighbors(bits, x: int, y: int) -> list[tuple[int, int]]:
    """Skeleton neighbors under staircase-reduced adjacency.

    A diagonal link is dropped whenever a 4-connected skeleton pixel bridges
    the pair; this keeps branches that meet at a junction from short-cutting
    around the junction pixel once it is removed.
    """
    h, w = bits.shape
    out = []
    for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0),
                   (1, -1), (1, 1), (-1, 1), (-1, -1)):
        nx, ny = x + dx, y + dy
        if not (0 <= nx < w and 0 <= ny < h) or not bits[ny, nx]:
            continue
        if dx != 0 and dy != 0 and (bits[y, nx] or bits[ny, x]):
            continue
        out.append((nx, ny))
    return out


def _trace_segments(bits, crucial, cruxes, owner) -> list[SegmentChain]:
    segments: list[SegmentChain] = []
    visited: set[tuple[int, int]] = set()
    ys, xs = np.nonzero(bits & ~crucial)
    for x, y in zip(xs.tolist(), ys.tolist()):
        if (x, y) in visited:
            continue
        comp = _flood(bits, owner, (x, y))
        visited |= comp
        chain = _order_component(bits, comp)
        # Cruxes adjacent to the chain ends.
        end_cruxes = []
        for px in (chain[0], chain[-1]):
            hit = None
            for nb in _px_neighbors(bits, px[0], px[1]):
                if nb in owner and nb not in comp:
                    hit = owner[nb]
                    break
            end_cruxes.append(hit)
        ca, cb = end_cruxes
        if ca is None and cb is None:
            # Isolated loop with no crucial pixel: promote one end as a crux.
            px = chain[0]
            cid = f"c{len(cruxes)}"
            cruxes.append(Crux(cid, (float(px[0]), float(px[1])), frozenset([px])))
            owner[px] = cid
            chain = chain[1:] or [px]
            ca = cb = cid
        elif ca is None:
            ca = cb
        elif cb is None:
            cb = ca
        crux_a = next(c for c in cruxes if c.id == ca)
        crux_b = next(c for c in cruxes if c.id == cb)
        pts = np.array([crux_a.pixel] + [list(map(float, p)) for p in chain]
                       + [crux_b.pixel])
        segments.append(SegmentChain(f"s{len(segments)}", pts, ca, cb))
    return segments


def _prune_graph(cruxes: list[Crux], segments: list[SegmentChain],
                 spur_len: float) -> tuple[list[Crux], list[SegmentChain]]:
    """Drop short dangling spurs and merge chains through degree-2 cruxes.

    Thinning a wide merged band grows short whisker branches near junctions;
    removing them (and the pass-through cruxes they leave behind) yields the
    minimal corridor graph.  Cruxes that carry route stops are never removed.
    """
    protected = {c.id for c in cruxes if c.source_vertices}
    segs = {s.id: s for s in segments}

    def incident(cid: str) -> list[str]:
        out = []
        for s in segs.values():
            if s.crux_a == cid:
                out.append(s.id)
            if s.crux_b == cid:
                out.append(s.id)
        return out

    changed = True
    while changed:
        changed = False
        for sid in sorted(segs, key=lambda t: int(t[1:])):
            s = segs[sid]
            if s.crux_a == s.crux_b:
                continue
            length = float(np.hypot(*(s.pixels[1:] - s.pixels[:-1]).T).sum())
            if length >= spur_len:
                continue
            if any(cid not in protected and incident(cid) == [sid]
                   for cid in (s.crux_a, s.crux_b)):
                del segs[sid]
                changed = True
                break
        if changed:
            continue
        for c in cruxes:
            if c.id in protected:
                continue
            inc = incident(c.id)
            if len(inc) != 2 or inc[0] == inc[1]:
                continue
            s1, s2 = segs[inc[0]], segs[inc[1]]
            p1 = s1.pixels if s1.crux_b == c.id else s1.pixels[::-1]
            far_a = s1.crux_a if s1.crux_b == c.id else s1.crux_b
            p2 = s2.pixels if s2.crux_a == c.id else s2.pixels[::-1]
            far_b = s2.crux_b if s2.crux_a == c.id else s2.crux_a
            segs[s1.id] = SegmentChain(s1.id, np.vstack([p1, p2[1:]]), far_a, far_b)
            del segs[s2.id]
            changed = True
            break

    used = {s.crux_a for s in segs.values()} | {s.crux_b for s in segs.values()}
    kept_cruxes = [c for c in cruxes if c.id in used or c.id in protected]
    ordered = [segs[sid] for sid in sorted(segs, key=lambda t: int(t[1:]))]
    renamed = [SegmentChain(f"s{i}", s.pixels, s.crux_a, s.crux_b)
               for i, s in enumerate(ordered)]
    return kept_cruxes, renamed


def _flood(bits, owner, start: tuple[int, int]) -> set[tuple[int, int]]:
    """Connected interior component under reduced adjacency."""
    comp = {start}
    queue = [start]
    while queue:
        cur = queue.pop()
        for nb in _px_neighbors(bits, cur[0], cur[1]):
            if nb not in owner and nb not in comp:
                comp.add(nb)
                queue.append(nb)
    return comp


def _order_component(bits, comp: set) -> list[tuple[int, int]]:
    """Order a 1-px interior component into a chain by walking its links."""
    start = None
    for px in sorted(comp):
        deg = sum(1 for nb in _px_neighbors(bits, px[0], px[1]) if nb in comp)
        if deg <= 1:
            start = px
            break
    if start is None:  # cycle: pick a deterministic start
        start = min(comp)
    chain = [start]
    visited = {start}
    cur = start
    while True:
        nxt = None
        for nb in _px_neighbors(bits, cur[0], cur[1]):
            if nb in comp and nb not in visited:
                nxt = nb
                break
        if nxt is None:
            break
        chain.append(nxt)
        visited.add(nxt)
        cur = nxt
    return chain


_TRANSITION_PENALTY = 30.0  # px-equivalent cost of hopping to an adjacent segment


def _map_routes(net, route_polylines, tree, pixels, crux_owner, seg_owner,
                seg_by_id, tol, cruxes):
    """Assign every route (and each of its edges) to skeleton segment chains.

    Each route polyline is map-matched onto the segment graph with a Viterbi
    pass: per-sample emission cost is the distance to the candidate segment,
    and switching segments costs a fixed penalty and is only allowed between
    segments sharing a crux.  This keeps nearest-pixel flutter near junctions
    from splitting a corridor run.
    """
    sids = sorted(seg_by_id, key=lambda t: int(t[1:]))
    sid_pos = {sid: k for k, sid in enumerate(sids)}
    n_states = len(sids)
    group = _group_cruxes(cruxes)
    # Transition cost grows with the hop distance between segments in the
    # crux-adjacency graph; unreachable pairs stay finite so the matcher can
    # never paint itself into an all-infinite corner.
    neighbors: list[list[int]] = [[] for _ in range(n_states)]
    for i, a in enumerate(sids):
        for j, b in enumerate(sids):
            if i == j:
                continue
            sa, sb = seg_by_id[a], seg_by_id[b]
            if {group[sa.crux_a], group[sa.crux_b]} & \
                    {group[sb.crux_a], group[sb.crux_b]}:
                neighbors[i].append(j)
    hops = np.full((n_states, n_states), float(n_states + 1))
    parents: list[dict[int, int]] = []
    for i in range(n_states):
        hops[i, i] = 0.0
        parent: dict[int, int] = {i: i}
        frontier = [i]
        depth = 0
        while frontier:
            depth += 1
            nxt = []
            for u in frontier:
                for v in neighbors[u]:
                    if v not in parent:
                        parent[v] = u
                        hops[i, v] = depth
                        nxt.append(v)
            frontier = nxt
        parents.append(parent)
    adj = hops * _TRANSITION_PENALTY
    seg_trees = {sid: cKDTree(seg_by_id[sid].pixels) for sid in sids}

    incidence: dict[str, list[str]] = {}
    route_chains: dict[str, list[tuple[str, bool]]] = {}
    k_query = min(12, len(pixels))
    crux_tree = cKDTree(np.array(sorted(crux_owner), dtype=np.float64)) \
        if crux_owner else None
    for r in net.routes:
        proj_pts = route_polylines[r.id]
        samples, arclen = _resample_with_arclength(proj_pts, 2.0)
        d, idx = tree.query(samples, k=k_query)
        d = np.atleast_2d(d)
        idx = np.atleast_2d(idx)
        if d[:, 0].min() > tol:
            raise SkeletonCoverageError(
                f"route '{r.id}' has no skeleton pixels within {tol:.1f}px")
        d_crux = crux_tree.query(samples)[0] if crux_tree is not None else \
            np.full(len(samples), np.inf)
        emit = np.full((len(samples), n_states), np.inf)
        for t in range(len(samples)):
            for di, ii in zip(d[t], idx[t]):
                if di > tol:
                    break
                px = (int(pixels[ii][0]), int(pixels[ii][1]))
                sid = seg_owner.get(px)
                if sid is not None:
                    k = sid_pos[sid]
                    if di < emit[t, k]:
                        emit[t, k] = di
            # A sample closer to a junction cluster than to any corridor is
            # inside the junction zone: no segment evidence there, or the
            # matcher would be forced onto whichever branch is nearest.
            best = emit[t].min()
            if not np.isfinite(best) or d_crux[t] < best:
                emit[t] = 0.0
        states = _viterbi(emit, adj)
        chain = _runs_to_chain(states, samples, sids, seg_trees)
        stop_groups = {group[c.id] for c in cruxes
                       if set(c.source_vertices) & set(r.stops)}
        chain = _drop_bounces(chain, seg_by_id, stop_groups, group)
        chain = _repair_chain(chain, seg_by_id, sids, sid_pos, parents, group)
        # Repair can expose a bounce that was hidden by a skipped segment;
        # dropping one keeps the chain contiguous, so no second repair pass.
        chain = _drop_bounces(chain, seg_by_id, stop_groups, group)
        # Dropping can leave the same traversal listed twice back to back;
        # an opposite-direction pair is a genuine U-turn and is kept.
        deduped: list[tuple[str, bool]] = []
        for el in chain:
            if not deduped or deduped[-1] != el:
                deduped.append(el)
        route_chains[r.id] = deduped
        _edge_incidence(r, net, proj_pts, arclen, states, sids, incidence)
    return incidence, route_chains


def _viterbi(emit: np.ndarray, adj: np.ndarray) -> list[int]:
    n, s = emit.shape
    back = np.zeros((n, s), dtype=np.int64)
    cost = emit[0].copy()
    for t in range(1, n):
        m = cost[:, None] + adj
        back[t] = np.argmin(m, axis=0)
        cost = m[back[t], np.arange(s)] + emit[t]
    path = [int(np.argmin(cost))]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path


def _runs_to_chain(states, samples, sids, seg_trees) -> list[tuple[str, bool]]:
    runs: list[tuple[int, list[int]]] = []
    for t, st in enumerate(states):
        if runs and runs[-1][0] == st:
            runs[-1][1].append(t)
        else:
            runs.append((st, [t]))
    chain: list[tuple[str, bool]] = []
    for st, ts in runs:
        sid = sids[st]
        _, i0 = seg_trees[sid].query(samples[ts[0]])
        _, i1 = seg_trees[sid].query(samples[ts[-1]])
        chain.append((sid, int(i1) >= int(i0)))
    return chain


def _group_cruxes(cruxes, radius: float = 3.0) -> dict[str, str]:
    """Union cruxes whose pixel clusters nearly touch.

    Thinning artifacts can split one physical junction into clusters a
    couple of pixels apart with no connecting segment; treating them as a
    single attachment point keeps the segment graph traversable there.
    """
    parent = {c.id: c.id for c in cruxes}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    pts: list[tuple[int, int]] = []
    owner: list[str] = []
    for c in cruxes:
        for p in c.pixels:
            pts.append(p)
            owner.append(c.id)
    if pts:
        tree = cKDTree(np.asarray(pts, dtype=np.float64))
        for i, j in tree.query_pairs(radius):
            a, b = find(owner[i]), find(owner[j])
            if a != b:
                parent[a] = b
    return {c.id: find(c.id) for c in cruxes}


def _drop_bounces(chain, seg_by_id, stop_groups, group):
    """Remove segments the chain enters and leaves through the same crux.

    Junction-zone samples sometimes match a branch the route merely passes
    by; the telltale is a chain element whose neighbors both attach at one
    crux, so the route would have to U-turn inside the branch.  A branch
    whose far end holds one of this route's stops is a genuine out-and-back
    and is kept.
    """
    changed = True
    while changed and len(chain) >= 3:
        changed = False
        for i in range(1, len(chain) - 1):
            mid = seg_by_id[chain[i][0]]
            prev = seg_by_id[chain[i - 1][0]]
            nxt = seg_by_id[chain[i + 1][0]]
            mid_cruxes = {group[mid.crux_a], group[mid.crux_b]}
            shared = (mid_cruxes
                      & {group[prev.crux_a], group[prev.crux_b]}
                      & {group[nxt.crux_a], group[nxt.crux_b]})
            if not shared:
                continue
            far = mid_cruxes - shared
            if far and far <= stop_groups:
                continue
            del chain[i]
            changed = True
            break
    return chain


def _repair_chain(chain, seg_by_id, sids, sid_pos, parents, group):
    """Insert segments the matcher hopped over so chains stay contiguous.

    The Viterbi pass may jump several segments at once through a junction
    zone; the skipped intermediates must still appear in the chain or the
    assembled route would bridge them with an unpacked straight line.
    """
    if not chain:
        return chain
    out = [chain[0]]
    for sid, fwd in chain[1:]:
        src, dst = sid_pos[out[-1][0]], sid_pos[sid]
        parent = parents[src]
        if dst in parent:
            path = [dst]
            while path[-1] != src:
                path.append(parent[path[-1]])
            path.reverse()
            for mid in path[1:-1]:
                mseg = seg_by_id[sids[mid]]
                prev_seg = seg_by_id[out[-1][0]]
                exit_crux = prev_seg.crux_b if out[-1][1] else prev_seg.crux_a
                out.append((sids[mid], group[mseg.crux_a] == group[exit_crux]))
        if out[-1][0] != sid:
            out.append((sid, fwd))
    return out


def _resample_with_arclength(pts: np.ndarray, spacing: float):
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.hypot(*(pts[1:] - pts[:-1]).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0:
        return pts[:1], np.zeros(1)
    n = max(2, int(math.ceil(total / spacing)) + 1)
    targets = np.linspace(0.0, total, n)
    x = np.interp(targets, s, pts[:, 0])
    y = np.interp(targets, s, pts[:, 1])
    return np.column_stack([x, y]), targets


def _edge_incidence(r, net, proj_pts, arclen, states, sids, incidence) -> None:
    """Per-edge segment lists from the sample arclengths of the matched route."""
    expected = 1 + sum(len(net.edge_by_id[eid].geometry) - 1 for eid in r.path)
    if len(proj_pts) != expected:
        # Not the original per-edge concatenation (e.g. displaced geometry
        # in a later iteration); edge attribution is undefined then.
        return
    seg = np.hypot(*(np.diff(proj_pts, axis=0)).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    cursor = 0
    breaks = [0.0]
    for eid in r.path:
        cursor += len(net.edge_by_id[eid].geometry) - 1
        breaks.append(cum[cursor])
    for i, eid in enumerate(r.path):
        lo, hi = breaks[i], breaks[i + 1]
        segs: list[str] = []
        for t, a in enumerate(arclen):
            if lo <= a <= hi:
                sid = sids[states[t]]
                if not segs or segs[-1] != sid:
                    segs.append(sid)
        incidence[eid] = segs


# ---------------------------------------------------------------------------
# Debug dumps
# ---------------------------------------------------------------------------

def write_pgm(grid: DensityGrid, path) -> None:
    mx = grid.cells.max()
    scaled = (grid.cells / mx * 255).astype(np.uint8) if mx > 0 else \
        np.zeros_like(grid.cells, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n255\n".encode())
        f.write(scaled.tobytes())


def write_pbm(img: BinaryImage, path) -> None:
    with open(path, "wb") as f:
        f.write(f"P1\n{img.width} {img.height}\n".encode())
        for row in img.bits:
            f.write((" ".join("1" if b else "0" for b in row) + "\n").encode())


def pruned_graph_to_json(pg: PrunedGraph) -> str:
    doc = {
        "cruxes": [
            {**{"x": c.pixel[0], "y": c.pixel[1]},
             **({"source": list(c.source_vertices)} if c.source_vertices else {})}
            for c in pg.cruxes
        ],
        "segments": [
            {"id": s.id, "pixels": [[float(x), float(y)] for x, y in s.pixels],
             "cruxA": s.crux_a, "cruxB": s.crux_b}
            for s in pg.segments
        ],
        "incidence": pg.incidence,
    }
    return json.dumps(doc, indent=2)
