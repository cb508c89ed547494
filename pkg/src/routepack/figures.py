"""Diagnostic matplotlib figures written alongside the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .packing import PackedLayout  # noqa: E402
from .skeleton import DensityGrid, Skeleton  # noqa: E402


def save_layout_figure(layout: PackedLayout, path, colors: dict[str, str] | None = None) -> None:
    colors = colors or {}
    fig, ax = plt.subplots(figsize=(layout.viewport.width / 100.0,
                                    layout.viewport.height / 100.0))
    for rl in layout.routes:
        pts = rl.full_polyline()
        if len(pts) < 2:
            continue
        ax.plot(pts[:, 0], pts[:, 1], lw=rl.width / 2.0,
                color=colors.get(rl.id, rl.color or "#444444"), label=rl.id)
        for stop in rl.stops:
            ax.plot(stop["x"], stop["y"], "o", ms=4, color="#222222")
    ax.set_xlim(0, layout.viewport.width)
    ax.set_ylim(layout.viewport.height, 0)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title(f"packed layout: {layout.crossings} crossings, "
                 f"{len(layout.residual)} residual entries")
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_density_figure(grid: DensityGrid, path) -> None:
    fig, ax = plt.subplots()
    im = ax.imshow(grid.cells, cmap="magma", origin="upper")
    fig.colorbar(im, ax=ax, label="line density")
    ax.set_title(f"KDE density (bandwidth {grid.bandwidth}px)")
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_skeleton_figure(sk: Skeleton, path) -> None:
    fig, ax = plt.subplots()
    ax.imshow(sk.image.bits, cmap="gray_r", origin="upper")
    if sk.bifurcations:
        xs, ys = zip(*sorted(sk.bifurcations))
        ax.plot(xs, ys, "r.", ms=4, label="bifurcations")
    if sk.endpoints:
        xs, ys = zip(*sorted(sk.endpoints))
        ax.plot(xs, ys, "b.", ms=4, label="endpoints")
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title("thinned skeleton")
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_offsets_figure(layout: PackedLayout, path) -> None:
    offsets = [s.offset for rl in layout.routes for s in rl.strokes]
    fig, ax = plt.subplots()
    ax.hist(offsets, bins=21, color="#4477aa", edgecolor="white")
    ax.set_xlabel("perpendicular offset (px)")
    ax.set_ylabel("strokes")
    ax.set_title("offset distribution")
    fig.savefig(path, dpi=100)
    plt.close(fig)
