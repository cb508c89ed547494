"""routepack: pack overlapping geographic routes side by side and render
styled SVG maps."""

from .model import (
    Edge,
    GeoPoint,
    Leg,
    NetworkValidationError,
    OutOfViewportError,
    Route,
    RouteNetwork,
    Vertex,
    Viewport,
    legs_of,
    parse_network,
    project,
    serialize_network,
)
from .packing import PackedLayout, PackParams, count_crossings, pack
from .styling import StyleSpec, assign_colors, style
from .svg import render

__version__ = "0.1.0"

__all__ = [
    "Edge", "GeoPoint", "Leg", "NetworkValidationError", "OutOfViewportError",
    "Route", "RouteNetwork", "Vertex", "Viewport", "legs_of", "parse_network",
    "project", "serialize_network", "PackedLayout", "PackParams",
    "count_crossings", "pack", "StyleSpec", "assign_colors", "style", "render",
]
