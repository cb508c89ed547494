"""Deterministic SVG 1.1 output for styled strokes and node glyphs.

Variable-width strokes are emitted as filled outline polygons; opacity
gradients are approximated by subdividing a stroke into short pieces with
piecewise-constant opacity.  Layer order: halos, strokes, arrows, node
glyphs, labels.  Identical inputs yield byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .model import Viewport
from .styling import Arrow, NodeGlyph, StyledStroke, StyleSpec

_OPACITY_PIECE_PX = 8.0


@dataclass(frozen=True)
class RenderOptions:
    background: str = "#ffffff"
    legend: bool = False
    legend_entries: tuple[tuple[str, str], ...] = ()  # (route id, color)


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _poly(points) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)


def stroke_outline(points: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Closed outline polygon of a variable-width stroke.

    Left boundary at +w/2 along the vertex normal, right at -w/2; the normal
    at a vertex is the normalized average of its adjacent segment normals.
    """
    pts = geom.dedupe_points(points)
    if len(pts) < 2:
        raise ValueError("stroke needs >= 2 distinct points")
    w = np.asarray(widths, dtype=np.float64)
    if len(w) != len(points):
        raise ValueError("widths must match points")
    # Re-associate widths with the deduped points by arc length.
    s_in = geom.arclengths(points)
    s_out = geom.arclengths(pts)
    w = np.interp(s_out, s_in, w)

    vec = pts[1:] - pts[:-1]
    ln = np.hypot(*vec.T)
    seg_n = np.column_stack([-vec[:, 1], vec[:, 0]]) / ln[:, None]
    vert_n = np.empty_like(pts)
    vert_n[0] = seg_n[0]
    vert_n[-1] = seg_n[-1]
    if len(pts) > 2:
        avg = seg_n[:-1] + seg_n[1:]
        mag = np.hypot(*avg.T)
        mag[mag < 1e-9] = 1.0
        vert_n[1:-1] = avg / mag[:, None]
    left = pts + vert_n * (w / 2.0)[:, None]
    right = pts - vert_n * (w / 2.0)[:, None]
    return np.vstack([left, right[::-1]])


def _stroke_polygons(stroke: StyledStroke, extra_width: float = 0.0):
    """Yield (outline points, opacity) pieces for one stroke."""
    pts, w, op = stroke.points, stroke.widths + extra_width, stroke.opacities
    if np.ptp(op) < 1e-9:
        yield stroke_outline(pts, w), float(op[0])
        return
    s = geom.arclengths(pts)
    total = s[-1]
    n_pieces = max(1, int(np.ceil(total / _OPACITY_PIECE_PX)))
    cuts = np.linspace(0.0, total, n_pieces + 1)
    for a, b in zip(cuts[:-1], cuts[1:]):
        sub_s = np.unique(np.concatenate([[a], s[(s > a) & (s < b)], [b]]))
        sub = np.column_stack([np.interp(sub_s, s, pts[:, 0]),
                               np.interp(sub_s, s, pts[:, 1])])
        sub_w = np.interp(sub_s, s, w)
        piece_op = float(np.interp((a + b) / 2.0, s, op))
        if len(geom.dedupe_points(sub)) >= 2:
            yield stroke_outline(sub, sub_w), piece_op


def _arrow_polygon(a: Arrow) -> np.ndarray:
    t = np.asarray(a.tangent)
    n = np.array([-t[1], t[0]])
    p = np.asarray(a.position)
    tip = p + t * a.size / 2.0
    back = p - t * a.size / 2.0
    return np.array([tip, back + n * a.size * 0.35, back - n * a.size * 0.35])


def render(
    strokes: list[StyledStroke],
    glyphs: list[NodeGlyph],
    vp: Viewport,
    options: RenderOptions | None = None,
    labels: list[tuple[str, float, float]] | None = None,
    spec: StyleSpec | None = None,
) -> bytes:
    """Render an SVG document; byte-identical for identical inputs."""
    options = options or RenderOptions()
    spec = spec or StyleSpec()
    w, h = _fmt(vp.width), _fmt(vp.height)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n',
        f'<rect id="background" x="0" y="0" width="{w}" height="{h}" '
        f'fill="{options.background}"/>\n',
    ]
    ordered = sorted(strokes, key=lambda s: s.route_id)

    parts.append('<g id="halos">\n')
    for st in ordered:
        if not st.halo:
            continue
        for outline, _ in _stroke_polygons(st, extra_width=2.0 * spec.halo_extra):
            parts.append(f'<polygon points="{_poly(outline)}" fill="{options.background}"/>\n')
    parts.append('</g>\n')

    parts.append('<g id="strokes">\n')
    for st in ordered:
        for outline, op in _stroke_polygons(st):
            op_attr = f' fill-opacity="{_fmt(op)}"' if op < 1.0 else ""
            parts.append(f'<polygon points="{_poly(outline)}" fill="{st.color}"{op_attr}/>\n')
    parts.append('</g>\n')

    parts.append('<g id="arrows">\n')
    for st in ordered:
        for a in st.arrows:
            parts.append(f'<polygon points="{_poly(_arrow_polygon(a))}" '
                         f'fill="#ffffff" stroke="#333333" stroke-width="0.5"/>\n')
    parts.append('</g>\n')

    parts.append('<g id="nodes">\n')
    for g in sorted(glyphs, key=lambda g: g.vertex_id):
        parts.extend(_glyph_svg(g))
    parts.append('</g>\n')

    parts.append('<g id="labels">\n')
    for text, x, y in labels or []:
        parts.append(f'<text x="{_fmt(x + 8)}" y="{_fmt(y - 8)}" font-family="sans-serif" '
                     f'font-size="12" fill="#222222">{_escape(text)}</text>\n')
    parts.append('</g>\n')

    if options.legend:
        parts.append(render_legend(spec, options.legend_entries))
    parts.append('</svg>\n')
    return "".join(parts).encode("utf-8")


def _glyph_svg(g: NodeGlyph) -> list[str]:
    cx, cy = _fmt(g.center[0]), _fmt(g.center[1])
    out: list[str] = []
    if g.mode == "rings":
        out.append(f'<circle cx="{cx}" cy="{cy}" r="5.00" fill="#ffffff"/>\n')
        for k, e in enumerate(g.entries):
            out.append(f'<circle class="stop-ring" cx="{cx}" cy="{cy}" r="{_fmt(6 + 2 * k)}" '
                       f'fill="none" stroke="{e.color}" stroke-width="2"/>\n')
    elif g.mode == "cookie-bites":
        out.append(f'<circle cx="{cx}" cy="{cy}" r="6.00" fill="#ffffff" '
                   f'stroke="#555555" stroke-width="1"/>\n')
        center = np.asarray(g.center)
        for e in g.entries:
            if e.in_tangent:  # arriving: arrow points into the center
                t = np.asarray(e.in_tangent)
                out.append(_bite(center - t * 9.0, t, e.color))
            if e.out_tangent:  # departing: arrow points out of the node
                t = np.asarray(e.out_tangent)
                out.append(_bite(center + t * 9.0, t, e.color))
    return out


def _bite(pos: np.ndarray, tangent: np.ndarray, color: str) -> str:
    tri = _arrow_polygon(Arrow((float(pos[0]), float(pos[1])),
                               (float(tangent[0]), float(tangent[1])), 6.0))
    return f'<polygon class="bite" points="{_poly(tri)}" fill="{color}"/>\n'


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def render_legend(spec: StyleSpec, entries: tuple[tuple[str, str], ...]) -> str:
    """SVG fragment mapping colors to route ids plus glyph meaning rows."""
    rows: list[str] = []
    y = 18
    for rid, color in entries:
        rows.append(f'<rect x="12" y="{y - 9}" width="14" height="10" fill="{color}"/>\n'
                    f'<text x="32" y="{y}" font-family="sans-serif" font-size="11" '
                    f'fill="#222222">{_escape(rid)}</text>\n')
        y += 16
    if spec.has_arrows:
        rows.append(f'<text x="12" y="{y}" font-family="sans-serif" font-size="11" '
                    f'fill="#222222">arrows point along travel direction</text>\n')
        y += 16
    if spec.node_mode == "rings":
        rows.append(f'<text x="12" y="{y}" font-family="sans-serif" font-size="11" '
                    f'fill="#222222">rings mark routes stopping at a node</text>\n')
        y += 16
    if spec.taper_scope:
        rows.append(f'<text x="12" y="{y}" font-family="sans-serif" font-size="11" '
                    f'fill="#222222">lines taper toward the destination</text>\n')
        y += 16
    if spec.opacity_scope:
        rows.append(f'<text x="12" y="{y}" font-family="sans-serif" font-size="11" '
                    f'fill="#222222">lines fade toward the destination</text>\n')
        y += 16
    box_h = y - 6
    return ('<g id="legend">\n'
            f'<rect x="6" y="2" width="220" height="{box_h}" fill="#ffffff" '
            f'stroke="#999999" stroke-width="0.5"/>\n' + "".join(rows) + '</g>\n')
