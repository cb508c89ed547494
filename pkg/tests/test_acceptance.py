"""Acceptance gate: the seven release criteria, one printed verdict each.

Each test exercises its criterion end to end at the stated tolerance and
prints a single PASS/FAIL line on the real stdout so the verdicts survive
pytest's capture.
"""

import math
import sys
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from helpers import (
    corridor_instance,
    parse_doc,
    triple_network_doc,
    viewport_for,
)
from routepack import generator, geom, packing, styling
from routepack.model import Viewport
from routepack.skeleton import (
    BinaryImage,
    crossing_number_map,
    rasterize_kde,
    thin,
)
from routepack.svg import RenderOptions, render

DATA = Path(__file__).parent / "data"
_EIGHT = np.ones((3, 3), dtype=int)


def _verdict(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{criterion}] {'PASS' if ok else 'FAIL'}: {detail}",
          file=sys.__stdout__, flush=True)
    assert ok, f"{criterion}: {detail}"


def _gen_viewport(net) -> Viewport:
    return viewport_for(net, 1200, 800, 40.0)


def _render_network(net, style_code: str = "tra") -> bytes:
    vp = _gen_viewport(net)
    layout = packing.pack(net, vp, packing.PackParams())
    colors = styling.assign_colors(layout, styling.DEFAULT_PALETTE)
    for rl in layout.routes:
        rl.color = colors[rl.id]
    spec = styling.StyleSpec.from_code(style_code)
    strokes, glyphs = styling.style(layout, spec, colors)
    return render(strokes, glyphs, layout.viewport, RenderOptions(), [], spec)


def test_criterion_1_oracle_equivalence():
    """Ranked layouts match the exhaustive crossing minimum, 100/100, <30 s."""
    vp = Viewport(1000, 800, (0.0, 0.0, 1.0, 1.0))
    params = packing.PackParams()
    t0 = time.time()
    matches = 0
    for seed in range(100):
        pg, _ = corridor_instance(seed)
        widths = {rid: 4.0 for rid in pg.route_chains}
        subpaths = packing.find_shared_subpaths(pg)
        ranks = packing.rank_routes(subpaths, pg)
        layout, _ = packing.layout_from_ranks(
            pg, subpaths, ranks.entries, widths, vp, params)
        oracle = packing.brute_force_min_crossings(
            subpaths, pg, widths, vp, params)
        if layout.crossings == oracle:
            matches += 1
    elapsed = time.time() - t0
    _verdict("criterion 1", matches == 100 and elapsed < 30.0,
             f"oracle equivalence {matches}/100 in {elapsed:.1f}s (limit 30s)")


def test_criterion_2_separation_invariant():
    """>= 45/50 generated networks converge residual-free within 5 iterations,
    and every converged layout keeps (w_i+w_j)/2 + gap - 0.5 px separation."""

    params = packing.PackParams()
    # Strokes converge to meet their neighbors at junctions; the transition
    # window covers at most 2x transition_px of post-blend arc length at
    # each stroke end, and separation is checked outside it.
    trim = 2.0 * params.transition_px + 0.5

    def interior(pts: np.ndarray) -> np.ndarray:
        s = geom.arclengths(pts)
        if s[-1] <= 2.0 * trim + 1.0:
            return pts[:0]
        rs = geom.resample(pts, 1.0)
        s = geom.arclengths(rs)
        return rs[(s >= trim) & (s <= s[-1] - trim)]

    converged = 0
    separation_ok = True
    worst = float("inf")
    for seed in range(50):
        net = generator.generate(generator.GenParams(
            nodes=10, route_count=(3, 5), seed=seed))
        layout = packing.pack(net, _gen_viewport(net), params)
        overlaps = [r for r in layout.residual if r.get("type") == "overlap"]
        if overlaps or layout.iterations > 5:
            continue
        converged += 1
        by_seg: dict[str, list[tuple[str, float, np.ndarray]]] = {}
        for rl in layout.routes:
            for s in rl.strokes:
                by_seg.setdefault(s.seg_id, []).append(
                    (rl.id, rl.width, s.points))
        for entries in by_seg.values():
            for i in range(len(entries)):
                for j in range(i + 1, len(entries)):
                    ri, wi, pi = entries[i]
                    rj, wj, pj = entries[j]
                    if ri == rj:
                        continue
                    pi, pj = interior(pi), interior(pj)
                    if len(pi) < 2 or len(pj) < 2:
                        continue
                    need = (wi + wj) / 2 + params.gap - 0.5
                    d = geom.min_polyline_distance(pi, pj)
                    worst = min(worst, d - need)
                    if d < need:
                        separation_ok = False
    ok = converged >= 45 and separation_ok
    _verdict("criterion 2", ok,
             f"{converged}/50 residual-free (need 45); separation margin "
             f"{worst:+.2f}px on converged layouts")


def test_criterion_3_thinning_suite():
    """Idempotence, component preservation, no 2x2 block, CN fixtures."""
    rng_fail = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        bits = np.zeros((60, 80), dtype=bool)
        for _ in range(rng.integers(1, 5)):
            cx, cy = rng.integers(10, 70), rng.integers(10, 50)
            r = rng.integers(3, 9)
            yy, xx = np.mgrid[0:60, 0:80]
            bits |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r ** 2
        img = BinaryImage(80, 60, bits)
        out = thin(img)
        idem = np.array_equal(out.bits, thin(out).bits)
        comp = (ndimage.label(img.bits, structure=_EIGHT)[1]
                == ndimage.label(out.bits, structure=_EIGHT)[1])
        b = out.bits
        no_quad = not (b[:-1, :-1] & b[:-1, 1:] & b[1:, :-1] & b[1:, 1:]).any()
        if not (idem and comp and no_quad):
            rng_fail.append(seed)

    tee = np.array([[c == "#" for c in row]
                    for row in ("...#...", "...#...", "#######")])
    cn = crossing_number_map(BinaryImage(7, 3, tee))
    fixtures_ok = (cn[2, 3] == 3 and cn[0, 3] == 1
                   and cn[2, 0] == 1 and cn[2, 6] == 1 and cn[2, 2] == 2)
    ok = not rng_fail and fixtures_ok
    _verdict("criterion 3", ok,
             f"thinning suite: {50 - len(rng_fail)}/50 blobs clean, "
             f"CN fixtures {'match' if fixtures_ok else 'mismatch'}")


def test_criterion_4_style_conformance():
    """All 8 codes: taper exactly 6/2 px, opacity exactly 1.00/0.35, arrow
    counts per the placement rule, ring count = stopping routes, valid XML."""
    net = parse_doc(triple_network_doc())
    layout = packing.pack(net, _gen_viewport(net), packing.PackParams())
    colors = styling.assign_colors(layout, styling.DEFAULT_PALETTE)
    problems: list[str] = []
    for code in styling.DIRECTION_MODES:
        spec = styling.StyleSpec.from_code(code)
        strokes, glyphs = styling.style(layout, spec, dict(colors))
        for st in strokes:
            if spec.taper_scope == "global":
                if not (st.widths[0] == 6.0 and st.widths[-1] == 2.0):
                    problems.append(f"{code}: taper {st.widths[0]}/{st.widths[-1]}")
            if spec.opacity_scope:
                if not (st.opacities[0] == 1.0 and st.opacities[-1] == 0.35):
                    problems.append(
                        f"{code}: opacity {st.opacities[0]}/{st.opacities[-1]}")
            length = geom.polyline_length(st.points)
            expected = max(1, int(length // spec.arrow_interval)) \
                if spec.has_arrows else 0
            if len(st.arrows) != expected:
                problems.append(f"{code}: {len(st.arrows)} arrows, "
                                f"expected {expected}")
        if code == "agr":
            stopping = {(g.vertex_id, e.route_id)
                        for g in glyphs for e in g.entries if e.stopping}
            expect = {(s["vertexId"], rl.id)
                      for rl in layout.routes for s in rl.stops}
            if stopping != expect:
                problems.append("agr: ring entries != stopping routes")
        data = render(strokes, glyphs, layout.viewport,
                      RenderOptions(), [], spec)
        try:
            ET.fromstring(data)
        except ET.ParseError as exc:
            problems.append(f"{code}: invalid XML ({exc})")
        if code == "agr":
            rings = data.decode().count('class="stop-ring"')
            if rings != len(expect):
                problems.append(f"agr: {rings} rings for {len(expect)} stops")
    _verdict("criterion 4", not problems,
             "8/8 style codes conform" if not problems
             else "; ".join(problems[:4]))


def test_criterion_5_determinism_and_golden():
    """gen(42)->pack->render is byte-stable; triple fixture matches golden."""
    net = generator.generate(generator.GenParams(
        nodes=10, route_count=(5, 5), seed=42))
    first = _render_network(net)
    second = _render_network(generator.generate(generator.GenParams(
        nodes=10, route_count=(5, 5), seed=42)))
    repeat_ok = first == second

    triple = parse_doc(triple_network_doc())
    vp = viewport_for(triple)
    layout = packing.pack(triple, vp, packing.PackParams())
    colors = styling.assign_colors(layout, styling.DEFAULT_PALETTE)
    for rl in layout.routes:
        rl.color = colors[rl.id]
    spec = styling.StyleSpec.from_code("tra")
    strokes, glyphs = styling.style(layout, spec, colors)
    data = render(strokes, glyphs, layout.viewport, RenderOptions(), [], spec)
    golden_ok = data == (DATA / "golden_triple.svg").read_bytes()
    _verdict("criterion 5", repeat_ok and golden_ok,
             f"repeat render byte-identical={repeat_ok}, "
             f"triple-overlap golden match={golden_ok}")


def test_criterion_6_performance():
    """10-node/5-route pack+render < 1 s; 40-node/15-route < 10 s."""
    def run(nodes, routes):
        net = generator.generate(generator.GenParams(
            nodes=nodes, route_count=(routes, routes), seed=42))
        t0 = time.perf_counter()
        _render_network(net)
        return time.perf_counter() - t0

    small = run(10, 5)
    large = run(40, 15)
    ok = small < 1.0 and large < 10.0
    _verdict("criterion 6", ok,
             f"10n/5r {small:.2f}s (limit 1s); 40n/15r {large:.2f}s (limit 10s)")


def test_criterion_7_numeric_checks():
    """KDE linearity +-1e-9; offset Hausdorff in [|d|, |d|+0.5]; mirror
    symmetry of +-d offsets on straight lines."""
    from scipy.spatial import cKDTree

    vp = Viewport(200, 150, (0.0, 0.0, 1.0, 1.0))
    rng = np.random.default_rng(0)
    lin_err = 0.0
    for _ in range(5):
        a = rng.uniform((20, 20), (180, 130), (3, 2))
        b = rng.uniform((20, 20), (180, 130), (4, 2))
        ga = rasterize_kde([a], 4.0, vp).cells
        gb = rasterize_kde([b], 4.0, vp).cells
        gab = rasterize_kde([a, b], 4.0, vp).cells
        lin_err = max(lin_err, float(np.abs(gab - (ga + gb)).max()))
    lin_ok = lin_err <= 1e-9

    def hausdorff(p, q):
        pd, qd = geom.resample(p, 0.5), geom.resample(q, 0.5)
        return max(cKDTree(qd).query(pd)[0].max(),
                   cKDTree(pd).query(qd)[0].max())

    haus_ok = True
    worst = ""
    for d in (1.0, 3.0, 6.5, 12.0):
        for sweep in (10.0, 45.0, 75.0):
            a = np.radians(np.linspace(0.0, sweep, 150))
            pts = np.column_stack([200.0 * np.sin(a), 200.0 * (1 - np.cos(a))])
            out = geom.offset_polyline(pts, d, chord_tol=0.25).points
            h = hausdorff(pts, out)
            if not (d - 1e-6 <= h <= d + 0.5):
                haus_ok = False
                worst = f" (d={d}, sweep={sweep}: H={h:.3f})"

    mirror_ok = True
    line = np.column_stack([np.linspace(0, 100, 21),
                            np.linspace(0, 60, 21)])
    for d in (0.5, 2.0, 7.0):
        plus = geom.offset_polyline(line, d).points
        minus = geom.offset_polyline(line, -d).points
        if not np.allclose((plus + minus) / 2.0, line, atol=1e-9):
            mirror_ok = False
    ok = lin_ok and haus_ok and mirror_ok
    _verdict("criterion 7", ok,
             f"KDE linearity err {lin_err:.1e} (tol 1e-9); Hausdorff bound "
             f"{'held' if haus_ok else 'violated' + worst}; mirror symmetry "
             f"{'held' if mirror_ok else 'violated'}")
