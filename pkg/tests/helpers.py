"""Shared builders for synthetic test instances."""

from __future__ import annotations

import json
import math
import random

import numpy as np

from routepack.model import Viewport, parse_network
from routepack.skeleton import Crux, PrunedGraph, SegmentChain


def straight_pixels(p0, p1, spacing: float = 4.0) -> np.ndarray:
    n = max(2, int(math.hypot(p1[0] - p0[0], p1[1] - p0[1]) / spacing))
    t = np.linspace(0.0, 1.0, n)
    return np.column_stack([p0[0] + (p1[0] - p0[0]) * t,
                            p0[1] + (p1[1] - p0[1]) * t])


def corridor_instance(seed: int) -> tuple[PrunedGraph, int]:
    """A single shared corridor with 2-5 routes fanning in and out.

    All routes traverse one central segment; each arrives and departs along
    its own arm at a distinct angle, so the corridor rank order fully
    determines the crossing count.
    """
    rng = random.Random(seed)
    n = rng.randint(2, 5)
    c_in, c_div = (300.0, 400.0), (700.0, 400.0)
    cruxes = [Crux("cin", c_in, frozenset({(300, 400)})),
              Crux("cdiv", c_div, frozenset({(700, 400)}))]
    segments = [SegmentChain("s0", straight_pixels(c_in, c_div), "cin", "cdiv")]
    chains: dict[str, list[tuple[str, bool]]] = {}
    arrival = rng.sample(range(-70, 71, 7), n)
    departure = rng.sample(range(-70, 71, 7), n)
    for i in range(n):
        ta, td = math.radians(arrival[i]), math.radians(departure[i])
        pa = (c_in[0] - 250 * math.cos(ta), c_in[1] - 250 * math.sin(ta))
        pd = (c_div[0] + 250 * math.cos(td), c_div[1] + 250 * math.sin(td))
        cruxes.append(Crux(f"ca{i}", pa, frozenset({(int(pa[0]), int(pa[1]))})))
        cruxes.append(Crux(f"cd{i}", pd, frozenset({(int(pd[0]), int(pd[1]))})))
        segments.append(SegmentChain(f"sa{i}", straight_pixels(pa, c_in), f"ca{i}", "cin"))
        segments.append(SegmentChain(f"sd{i}", straight_pixels(c_div, pd), "cdiv", f"cd{i}"))
        chains[f"r{i + 1}"] = [(f"sa{i}", True), ("s0", True), (f"sd{i}", True)]
    return PrunedGraph(cruxes, segments, {}, chains), n


def network_doc(vertices, edges, routes) -> str:
    return json.dumps({
        "crs": "EPSG:4326",
        "vertices": [{"id": vid, "lon": lon, "lat": lat, "kind": "major"}
                     for vid, lon, lat in vertices],
        "edges": [{"id": eid, "from": a, "to": b,
                   "geometry": [[ga, gb] for ga, gb in geometry]}
                  for eid, a, b, geometry in edges],
        "routes": routes,
    })


def _fan_doc(n_arms: int) -> str:
    """n_arms routes merging into one shared central corridor."""
    j1, j2 = (0.35, 0.50), (0.65, 0.50)
    spread = [0.30, 0.50, 0.70, 0.26, 0.74][:n_arms]
    vertices = [("j1", *j1), ("j2", *j2)]
    edges = [("ec", "j1", "j2", [j1, j2])]
    routes = []
    for i, lat in enumerate(spread):
        a, b = (0.10, lat), (0.90, lat)
        vertices += [(f"a{i}", *a), (f"b{i}", *b)]
        edges += [(f"ea{i}", f"a{i}", "j1", [a, j1]),
                  (f"eb{i}", "j2", f"b{i}", [j2, b])]
        routes.append({"id": f"r{i + 1}", "stops": [f"a{i}", f"b{i}"],
                       "path": [f"ea{i}", "ec", f"eb{i}"]})
    return network_doc(vertices, edges, routes)


def twin_network_doc() -> str:
    return _fan_doc(2)


def triple_network_doc() -> str:
    return _fan_doc(3)


def viewport_for(net, width: float = 1200.0, height: float = 800.0,
                 padding: float = 40.0) -> Viewport:
    lon0, lat0, lon1, lat1 = net.route_bounding_box()
    mx = max((lon1 - lon0) * 0.02, 1e-6)
    my = max((lat1 - lat0) * 0.02, 1e-6)
    return Viewport(width, height, (lon0 - mx, lat0 - my, lon1 + mx, lat1 + my),
                    padding)


def parse_doc(doc: str):
    return parse_network(doc)
