"""Visual attributes for a packed layout: colors, direction encodings,
volume widths, halos, and node glyphs.

Direction encodings follow the eight style codes: AG (arrow glyphs), TR
(transparency gradient), LT/GT (local/global tapered line), TRA/LTA/GTA
(dual encodings with arrows), and AGR (arrows plus concentric stop rings).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .packing import PackedLayout, RouteLayout

log = logging.getLogger(__name__)

DIRECTION_MODES = ("ag", "tr", "lt", "gt", "tra", "lta", "gta", "agr")
NODE_MODES = ("rings", "cookie-bites", "integrated-arrows", "none")

# 12 maximally-distinct categorical colors.
DEFAULT_PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0",
    "#f032e6", "#bcf60c", "#008080", "#9a6324", "#800000", "#000075",
)

# Color-vision-deficiency-safe alternative (Paul Tol's bright + muted picks).
CVD_SAFE_PALETTE = (
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377",
    "#bbbbbb", "#332288", "#ddcc77", "#117733", "#cc6677", "#882255",
)


@dataclass(frozen=True)
class StyleSpec:
    direction: str = "ag"
    node_mode: str = "none"
    palette: tuple[str, ...] = DEFAULT_PALETTE
    width_min: float = 2.0
    width_max: float = 6.0
    opacity_min: float = 0.35
    opacity_max: float = 1.0
    arrow_interval: float = 60.0
    arrow_scale: float = 2.5
    halo_extra: float = 1.5
    gap: float = 2.0

    def __post_init__(self) -> None:
        if self.direction not in DIRECTION_MODES:
            raise ValueError(f"unknown direction mode '{self.direction}'; "
                             f"valid: {', '.join(DIRECTION_MODES)}")
        if self.node_mode not in NODE_MODES:
            raise ValueError(f"unknown node mode '{self.node_mode}'")
        if not self.width_min < self.width_max:
            raise ValueError("width_min must be < width_max")
        if not self.opacity_min < self.opacity_max <= 1.0:
            raise ValueError("opacity_min must be < opacity_max <= 1")
        if self.arrow_interval <= 0:
            raise ValueError("arrow_interval must be positive")

    @staticmethod
    def from_code(code: str, node_mode: str | None = None, **kwargs) -> "StyleSpec":
        code = code.lower()
        if code not in DIRECTION_MODES:
            raise ValueError(f"unknown style code '{code}'; "
                             f"valid: {', '.join(c.upper() for c in DIRECTION_MODES)}")
        nm = node_mode if node_mode is not None else ("rings" if code == "agr" else "none")
        return StyleSpec(direction=code, node_mode=nm, **kwargs)

    @property
    def has_arrows(self) -> bool:
        return self.direction in ("ag", "tra", "lta", "gta", "agr")

    @property
    def taper_scope(self) -> str | None:
        if self.direction in ("lt", "lta"):
            return "local"
        if self.direction in ("gt", "gta"):
            return "global"
        return None

    @property
    def opacity_scope(self) -> str | None:
        return "global" if self.direction in ("tr", "tra") else None


@dataclass
class Arrow:
    position: tuple[float, float]
    tangent: tuple[float, float]  # unit vector
    size: float


@dataclass
class StyledStroke:
    route_id: str
    points: np.ndarray
    widths: np.ndarray
    opacities: np.ndarray
    color: str
    arrows: list[Arrow] = field(default_factory=list)
    halo: bool = True


@dataclass
class NodeGlyphEntry:
    route_id: str
    color: str
    stopping: bool
    in_tangent: tuple[float, float] | None = None
    out_tangent: tuple[float, float] | None = None


@dataclass
class NodeGlyph:
    vertex_id: str
    center: tuple[float, float]
    mode: str
    entries: list[NodeGlyphEntry]


# ---------------------------------------------------------------------------
# Colors
# ---------------------------------------------------------------------------

def assign_colors(layout: PackedLayout, palette=DEFAULT_PALETTE) -> dict[str, str]:
    """Greedy conflict-graph coloring: routes sharing a segment get distinct
    palette entries whenever the palette is large enough."""
    if not palette:
        raise ValueError("palette must be non-empty")
    seg_routes: dict[str, set[str]] = {}
    for rl in layout.routes:
        for s in rl.strokes:
            seg_routes.setdefault(s.seg_id, set()).add(rl.id)
    adjacency: dict[str, set[str]] = {rl.id: set() for rl in layout.routes}
    for routes in seg_routes.values():
        for a in routes:
            for b in routes:
                if a != b:
                    adjacency[a].add(b)
    colors: dict[str, str] = {}
    reused = False
    for rid in sorted(adjacency):
        used = {colors[n] for n in adjacency[rid] if n in colors}
        pick = next((c for c in palette if c not in used), None)
        if pick is None:
            pick = palette[len(colors) % len(palette)]
            reused = True
        colors[rid] = pick
    if reused:
        log.warning("chromatic demand exceeds palette size; colors reused")
    return colors


# ---------------------------------------------------------------------------
# Width / opacity profiles
# ---------------------------------------------------------------------------

def base_width(route_id: str, volumes, spec: StyleSpec) -> list[float] | float:
    """Per-leg base width from volumes, or the midpoint width without them."""
    if not volumes:
        return (spec.width_min + spec.width_max) / 2.0
    vmin, vmax = min(volumes), max(volumes)
    if vmax == vmin:
        return [(spec.width_min + spec.width_max) / 2.0] * len(volumes)
    span = spec.width_max - spec.width_min
    return [spec.width_min + (v - vmin) / (vmax - vmin) * span for v in volumes]


def taper_profile(s: float, length: float, spec: StyleSpec) -> float:
    """Linear width from width_max at the scope start to width_min at its end."""
    if length <= 0:
        raise ValueError("scope length must be positive")
    t = min(max(s / length, 0.0), 1.0)
    return spec.width_max + t * (spec.width_min - spec.width_max)


def opacity_profile(s: float, length: float, spec: StyleSpec) -> float:
    """Linear opacity from opacity_max at the scope start to opacity_min at its end."""
    if length <= 0:
        raise ValueError("scope length must be positive")
    t = min(max(s / length, 0.0), 1.0)
    return spec.opacity_max + t * (spec.opacity_min - spec.opacity_max)


# ---------------------------------------------------------------------------
# Arrows
# ---------------------------------------------------------------------------

def place_arrows(points: np.ndarray, widths: np.ndarray, spec: StyleSpec) -> list[Arrow]:
    """Arrows at regular arc-length intervals, scaled by the local width.

    Placed at interval/2, 3*interval/2, ...; a stroke shorter than one
    interval gets a single centered arrow.  Count = max(1, floor(L/interval)).
    """
    length = geom.polyline_length(points)
    if length <= 0:
        raise ValueError("stroke must have positive length")
    interval = spec.arrow_interval
    n = max(1, int(length // interval))
    if n == 1:
        positions = [length / 2.0]
    else:
        positions = [interval / 2.0 + k * interval for k in range(n)]
    s_axis = geom.arclengths(points)
    arrows: list[Arrow] = []
    for s in positions:
        w = float(np.interp(s, s_axis, widths))
        size = spec.arrow_scale * w
        # Keep the glyph at least one arrow-length away from the ends.
        s = min(max(s, size), max(length - size, length / 2.0))
        pt, tan = geom.point_at(points, s)
        arrows.append(Arrow((float(pt[0]), float(pt[1])),
                            (float(tan[0]), float(tan[1])), size))
    return arrows


# ---------------------------------------------------------------------------
# Node glyphs
# ---------------------------------------------------------------------------

def node_glyphs(layout: PackedLayout, colors: dict[str, str], mode: str,
                pass_radius: float = 8.0) -> list[NodeGlyph]:
    """One glyph per vertex where at least one route stops.

    Stopping routes are listed innermost-first in route-id order; passing
    routes get no entry in rings mode but are detectable via pass_radius.
    """
    if mode == "none":
        return []
    centers: dict[str, tuple[float, float]] = {}
    stopping: dict[str, list[str]] = {}
    for rl in layout.routes:
        for stop in rl.stops:
            vid = stop["vertexId"]
            centers[vid] = (stop["x"], stop["y"])
            stopping.setdefault(vid, [])
            if rl.id not in stopping[vid]:
                stopping[vid].append(rl.id)
    glyphs: list[NodeGlyph] = []
    for vid in sorted(centers):
        entries: list[NodeGlyphEntry] = []
        for rid in sorted(stopping[vid]):
            rl = next(r for r in layout.routes if r.id == rid)
            tin, tout = _stop_tangents(rl, centers[vid])
            entries.append(NodeGlyphEntry(rid, colors[rid], True, tin, tout))
        glyphs.append(NodeGlyph(vid, centers[vid], mode, entries))
    return glyphs


def _stop_tangents(rl: RouteLayout, center) -> tuple[tuple | None, tuple | None]:
    pts = rl.full_polyline()
    if len(pts) < 2:
        return None, None
    d = np.hypot(*(pts - np.asarray(center)).T)
    i = int(np.argmin(d))
    s_axis = geom.arclengths(pts)
    tin = tout = None
    if i > 0:
        _, t = geom.point_at(pts, max(s_axis[i] - 1.0, 0.0))
        tin = (float(t[0]), float(t[1]))
    if i < len(pts) - 1:
        _, t = geom.point_at(pts, min(s_axis[i] + 1.0, s_axis[-1]))
        tout = (float(t[0]), float(t[1]))
    return tin, tout


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def style(layout: PackedLayout, spec: StyleSpec,
          colors: dict[str, str] | None = None
          ) -> tuple[list[StyledStroke], list[NodeGlyph]]:
    """Compose widths, opacities, arrows, and node glyphs per the style code."""
    colors = colors or {}
    for rl in layout.routes:
        colors.setdefault(rl.id, rl.color or DEFAULT_PALETTE[0])

    strokes: list[StyledStroke] = []
    for rl in layout.routes:
        pts = rl.full_polyline()
        if len(pts) < 2:
            continue
        pts = geom.resample(pts, 4.0)
        s_axis = geom.arclengths(pts)
        total = s_axis[-1]
        if total <= 0:
            continue
        leg_bounds = _leg_boundaries(rl, pts, s_axis)
        base = base_width(rl.id, rl.volumes, spec)
        widths = np.array([
            _width_at(s, total, leg_bounds, base, rl, spec) for s in s_axis])
        if spec.opacity_scope:
            opac = np.array([opacity_profile(s, total, spec) for s in s_axis])
        else:
            opac = np.full(len(pts), spec.opacity_max)
        stroke = StyledStroke(rl.id, pts, widths, opac, colors[rl.id])
        if spec.has_arrows:
            stroke.arrows = place_arrows(pts, widths, spec)
        if spec.node_mode == "integrated-arrows":
            stroke.arrows.extend(_integrated_stop_arrows(rl, pts, widths, spec))
        strokes.append(stroke)

    glyph_mode = spec.node_mode if spec.node_mode in ("rings", "cookie-bites") else "none"
    glyphs = node_glyphs(layout, colors, glyph_mode)
    return strokes, glyphs


def _leg_boundaries(rl: RouteLayout, pts: np.ndarray, s_axis: np.ndarray) -> list[float]:
    bounds = [0.0]
    for stop in rl.stops[1:-1]:
        d = np.hypot(*(pts - np.array([stop["x"], stop["y"]])).T)
        bounds.append(float(s_axis[int(np.argmin(d))]))
    bounds.append(float(s_axis[-1]))
    return sorted(bounds)


def _width_at(s, total, leg_bounds, base, rl, spec: StyleSpec) -> float:
    leg = 0
    for k in range(len(leg_bounds) - 1):
        if s >= leg_bounds[k]:
            leg = k
    leg_len = leg_bounds[leg + 1] - leg_bounds[leg]
    if isinstance(base, list):
        leg_base = base[min(leg, len(base) - 1)]
    else:
        leg_base = base
    scope = spec.taper_scope
    if scope is None:
        return leg_base
    if scope == "global":
        w = taper_profile(s, total, spec)
    else:
        w = taper_profile(s - leg_bounds[leg], max(leg_len, 1e-9), spec)
    if isinstance(base, list):
        # Volume widths compose with taper: scale the taper fraction by the
        # leg's volume-derived base width.
        return (w / spec.width_max) * leg_base
    return w


def _integrated_stop_arrows(rl, pts, widths, spec) -> list[Arrow]:
    arrows: list[Arrow] = []
    s_axis = geom.arclengths(pts)
    for stop in rl.stops:
        d = np.hypot(*(pts - np.array([stop["x"], stop["y"]])).T)
        s = float(s_axis[int(np.argmin(d))])
        w = float(np.interp(s, s_axis, widths))
        pt, tan = geom.point_at(pts, s)
        arrows.append(Arrow((float(pt[0]), float(pt[1])),
                            (float(tan[0]), float(tan[1])), spec.arrow_scale * w))
    return arrows
