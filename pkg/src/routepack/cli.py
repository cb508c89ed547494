"""Command-line interface: gen, pack, render, stats.

Exit codes: 0 success, 2 usage or validation error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import generator, packing, styling
from .model import NetworkValidationError, Viewport, parse_network
from .skeleton import SkeletonCoverageError
from .svg import RenderOptions, render


def _parse_range(text: str, flag: str) -> tuple[int, int]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return int(lo), int(hi)
        v = int(text)
        return v, v
    except ValueError:
        raise SystemExit(_usage_error(f"{flag} expects N or A..B, got '{text}'"))


def _parse_viewport(text: str) -> tuple[float, float]:
    try:
        w, h = text.lower().split("x", 1)
        return float(w), float(h)
    except ValueError:
        raise SystemExit(_usage_error(f"--viewport expects WxH, got '{text}'"))


def _usage_error(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _load_palette() -> tuple[str, ...]:
    path = os.environ.get("ROUTEPACK_PALETTE")
    if not path:
        return styling.DEFAULT_PALETTE
    if path == "cvd":
        return styling.CVD_SAFE_PALETTE
    with open(path, encoding="utf-8") as f:
        colors = json.load(f)
    if not isinstance(colors, list) or not colors:
        raise NetworkValidationError(f"palette file '{path}' must be a non-empty JSON array")
    return tuple(colors)


def _viewport_for(net, width: float, height: float, padding: float) -> Viewport:
    lon0, lat0, lon1, lat1 = net.route_bounding_box()
    mx = max((lon1 - lon0) * 0.02, 1e-6)
    my = max((lat1 - lat0) * 0.02, 1e-6)
    return Viewport(width, height, (lon0 - mx, lat0 - my, lon1 + mx, lat1 + my), padding)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_pack(args) -> int:
    try:
        net = parse_network(Path(args.input).read_bytes())
    except FileNotFoundError:
        return _usage_error(f"input file '{args.input}' not found")
    except NetworkValidationError as exc:
        return _usage_error(str(exc))
    w, h = _parse_viewport(args.viewport)
    vp = _viewport_for(net, w, h, args.padding)
    params = packing.PackParams(bandwidth=args.bandwidth, gap=args.gap,
                                widths=_volume_widths(net))
    try:
        layout = packing.pack(net, vp, params)
    except (SkeletonCoverageError, NetworkValidationError) as exc:
        return _usage_error(str(exc))
    colors = styling.assign_colors(layout, _load_palette())
    for rl in layout.routes:
        rl.color = colors[rl.id]
    Path(args.out).write_text(packing.layout_to_json(layout), encoding="utf-8")
    if layout.residual:
        print(f"warning: {len(layout.residual)} residual report entries "
              f"after {layout.iterations} iterations", file=sys.stderr)
    if args.debug_dir:
        _write_debug(net, vp, params, args.debug_dir)
    if args.figures:
        _pack_figures(layout, colors, net, vp, params, args.figures)
    return 0


def _volume_widths(net) -> dict[str, float]:
    """Per-route packing width: max volume-scaled leg width, or the default."""
    spec = styling.StyleSpec()
    widths = {}
    for r in net.routes:
        base = styling.base_width(r.id, r.volumes, spec)
        widths[r.id] = max(base) if isinstance(base, list) else base
    return widths


def _write_debug(net, vp, params, debug_dir) -> None:
    from . import skeleton as sk_mod

    d = Path(debug_dir)
    d.mkdir(parents=True, exist_ok=True)
    from .model import Projector
    proj = Projector(vp)
    polylines = [sk_mod.project_route_polyline(r.id, net, proj) for r in net.routes]
    grid = sk_mod.rasterize_kde(polylines, params.bandwidth, vp)
    img = sk_mod.binarize(grid, params.binarize_fraction)
    thinned = sk_mod.thin(img)
    sk = sk_mod.Skeleton.from_image(thinned)
    pg = sk_mod.build_pruned_graph(sk, net, vp, params.bandwidth)
    sk_mod.write_pgm(grid, d / "density.pgm")
    sk_mod.write_pbm(img, d / "binary.pbm")
    sk_mod.write_pbm(thinned, d / "skeleton.pbm")
    (d / "pruned_graph.json").write_text(sk_mod.pruned_graph_to_json(pg), encoding="utf-8")


def _pack_figures(layout, colors, net, vp, params, fig_dir) -> None:
    from . import figures, skeleton as sk_mod
    from .model import Projector

    d = Path(fig_dir)
    d.mkdir(parents=True, exist_ok=True)
    proj = Projector(vp)
    polylines = [sk_mod.project_route_polyline(r.id, net, proj) for r in net.routes]
    grid = sk_mod.rasterize_kde(polylines, params.bandwidth, vp)
    sk = sk_mod.Skeleton.from_image(sk_mod.thin(sk_mod.binarize(grid, params.binarize_fraction)))
    figures.save_density_figure(grid, d / "density.png")
    figures.save_skeleton_figure(sk, d / "skeleton.png")
    figures.save_layout_figure(layout, d / "layout.png", colors)


def cmd_render(args) -> int:
    code = args.style.lower()
    if code not in styling.DIRECTION_MODES:
        return _usage_error(
            f"unknown style code '{args.style}'; valid codes: "
            + ", ".join(c.upper() for c in styling.DIRECTION_MODES))
    if args.node_mode is not None and args.node_mode not in styling.NODE_MODES:
        return _usage_error(f"unknown node mode '{args.node_mode}'; valid: "
                            + ", ".join(styling.NODE_MODES))
    try:
        layout = packing.layout_from_json(Path(args.layout).read_text(encoding="utf-8"))
    except FileNotFoundError:
        return _usage_error(f"layout file '{args.layout}' not found")
    except (json.JSONDecodeError, KeyError) as exc:
        return _usage_error(f"malformed layout file: {exc}")
    spec = styling.StyleSpec.from_code(code, node_mode=args.node_mode)
    colors = {rl.id: rl.color for rl in layout.routes if rl.color}
    strokes, glyphs = styling.style(layout, spec, colors)
    labels = [(s["label"], s["x"], s["y"])
              for rl in layout.routes for s in rl.stops if s.get("label")]
    seen = set()
    labels = [l for l in labels if not (l in seen or seen.add(l))]
    entries = tuple((rl.id, colors.get(rl.id, "#444444")) for rl in layout.routes)
    options = RenderOptions(legend=args.legend, legend_entries=entries)
    Path(args.out).write_bytes(render(strokes, glyphs, layout.viewport,
                                      options, labels, spec))
    return 0


def cmd_gen(args) -> int:
    try:
        params = generator.GenParams(
            nodes=args.nodes,
            route_count=_parse_range(args.routes, "--routes"),
            stops_per_route=_parse_range(args.stops, "--stops"),
            seed=args.seed,
            with_volumes=args.volumes,
        )
        doc = generator.generate_document(params)
    except generator.GenerationError as exc:
        return _usage_error(str(exc))
    Path(args.out).write_text(doc, encoding="utf-8")
    if args.emit_trials:
        net = parse_network(doc)
        rows = generator.trial_pairs(net, args.emit_trials_count, args.seed)
        lines = ["nodeA,nodeB,connected"]
        lines += [f"{a},{b},{'1' if c else '0'}" for a, b, c in rows]
        Path(args.emit_trials).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    try:
        layout = packing.layout_from_json(Path(args.layout).read_text(encoding="utf-8"))
    except FileNotFoundError:
        return _usage_error(f"layout file '{args.layout}' not found")
    except (json.JSONDecodeError, KeyError) as exc:
        return _usage_error(f"malformed layout file: {exc}")

    offsets = [abs(s.offset) for rl in layout.routes for s in rl.strokes]
    seg_groups: dict[str, list[tuple[float, float]]] = {}
    for rl in layout.routes:
        for s in rl.strokes:
            seg_groups.setdefault(s.seg_id, []).append((s.offset, rl.width))
    bundle_max = 0.0
    for entries in seg_groups.values():
        hi = max(o + w / 2 for o, w in entries)
        lo = min(o - w / 2 for o, w in entries)
        bundle_max = max(bundle_max, hi - lo)

    metrics = {
        "crossings": layout.crossings,
        "residualOverlaps": sum(1 for r in layout.residual if r.get("type") == "overlap"),
        "residualEntries": len(layout.residual),
        "maxAbsOffsetPx": round(max(offsets), 2) if offsets else 0.0,
        "maxBundleWidthPx": round(bundle_max, 2),
        "routeCount": len(layout.routes),
        "strokeCounts": {rl.id: len(rl.strokes) for rl in layout.routes},
    }
    if args.json:
        print(json.dumps(metrics, indent=2))
    else:
        for k, v in metrics.items():
            if k == "strokeCounts":
                for rid, n in v.items():
                    print(f"strokes[{rid}]\t{n}")
            else:
                print(f"{k}\t{v}")
    if args.figures:
        from . import figures

        d = Path(args.figures)
        d.mkdir(parents=True, exist_ok=True)
        colors = {rl.id: rl.color for rl in layout.routes if rl.color}
        figures.save_layout_figure(layout, d / "layout.png", colors)
        figures.save_offsets_figure(layout, d / "offsets.png")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="routepack",
                                description="Pack overlapping routes and render styled maps")
    sub = p.add_subparsers(dest="command", required=True)

    gp = sub.add_parser("pack", help="compute a packed layout from a network file")
    gp.add_argument("--input", required=True)
    gp.add_argument("--viewport", default="1200x800")
    gp.add_argument("--gap", type=float, default=2.0)
    gp.add_argument("--bandwidth", type=float, default=4.0)
    gp.add_argument("--padding", type=float, default=40.0)
    gp.add_argument("--out", required=True)
    gp.add_argument("--debug-dir", default=None)
    gp.add_argument("--figures", default=None)
    gp.set_defaults(func=cmd_pack)

    gr = sub.add_parser("render", help="render a layout to SVG")
    gr.add_argument("--layout", required=True)
    gr.add_argument("--style", required=True)
    gr.add_argument("--node-mode", default=None)
    gr.add_argument("--legend", action="store_true")
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_render)

    gg = sub.add_parser("gen", help="generate a synthetic network")
    gg.add_argument("--nodes", type=int, default=10)
    gg.add_argument("--routes", default="3..5")
    gg.add_argument("--stops", default="3..5")
    gg.add_argument("--seed", type=int, default=0)
    gg.add_argument("--volumes", action="store_true")
    gg.add_argument("--out", required=True)
    gg.add_argument("--emit-trials", default=None)
    gg.add_argument("--emit-trials-count", type=int, default=20)
    gg.set_defaults(func=cmd_gen)

    gs = sub.add_parser("stats", help="print metrics for a layout")
    gs.add_argument("--layout", required=True)
    gs.add_argument("--json", action="store_true")
    gs.add_argument("--figures", default=None)
    gs.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (NetworkValidationError, generator.GenerationError, ValueError) as exc:
        return _usage_error(str(exc))
    except Exception as exc:  # internal pipeline failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
