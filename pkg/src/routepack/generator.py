"""Synthetic route-network generator.

Builds a jittered-grid road network connected by Delaunay triangulation
(planar by construction), samples major nodes, and derives each route as a
shortest-path chain through 3-5 randomly chosen stops.  Seed-deterministic;
output always satisfies the network-model invariants.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.spatial import Delaunay

from .model import RouteNetwork, parse_network, serialize_network


class GenerationError(ValueError):
    """Infeasible generator parameters."""


@dataclass(frozen=True)
class GenParams:
    nodes: int = 10
    route_count: tuple[int, int] = (3, 5)
    stops_per_route: tuple[int, int] = (3, 5)
    seed: int = 0
    grid_density: int = 6
    with_volumes: bool = False

    def __post_init__(self) -> None:
        if self.nodes < 2:
            raise GenerationError("need at least 2 nodes")
        for name, (lo, hi) in (("route_count", self.route_count),
                               ("stops_per_route", self.stops_per_route)):
            if lo > hi or lo < 1:
                raise GenerationError(f"empty {name} range {lo}..{hi}")
        if self.stops_per_route[0] < 2:
            raise GenerationError("routes need at least 2 stops")
        if self.grid_density < 2:
            raise GenerationError("grid density must be >= 2")


def generate(params: GenParams) -> RouteNetwork:
    if params.stops_per_route[0] > params.nodes:
        raise GenerationError(
            f"stops range {params.stops_per_route[0]}..{params.stops_per_route[1]} "
            f"infeasible with {params.nodes} nodes")
    rng = random.Random(params.seed)
    g = max(params.grid_density, int(math.ceil(math.sqrt(params.nodes))) + 1)

    # Jittered grid in a unit geographic box.
    cell = 0.8 / (g - 1)
    pts = []
    for row in range(g):
        for col in range(g):
            jx = rng.uniform(-0.3, 0.3) * cell
            jy = rng.uniform(-0.3, 0.3) * cell
            pts.append((round(0.1 + col * cell + jx, 6), round(0.1 + row * cell + jy, 6)))

    tri = Delaunay(np.asarray(pts))
    road_edges: set[tuple[int, int]] = set()
    sliver_edges: set[tuple[int, int]] = set()
    for simplex in tri.simplices:
        tri_edges = []
        for a, b in ((0, 1), (1, 2), (0, 2)):
            i, j = int(simplex[a]), int(simplex[b])
            tri_edges.append((min(i, j), max(i, j)))
        road_edges.update(tri_edges)
        # Flat sliver triangles put two roads nearly on top of each other;
        # drop the longest edge so corridors stay visually distinct.
        if _min_angle_deg(pts, simplex) < 18.0:
            longest = max(tri_edges,
                          key=lambda e: math.dist(pts[e[0]], pts[e[1]]))
            sliver_edges.add(longest)
    kept = road_edges - sliver_edges
    g_check = nx.Graph(kept)
    # Re-add a dropped edge only if its removal disconnected the roads.
    for e in sorted(sliver_edges):
        if e[0] not in g_check or e[1] not in g_check or \
                not nx.has_path(g_check, e[0], e[1]):
            kept.add(e)
            g_check.add_edge(*e)
    edge_list = sorted(kept)

    majors = sorted(rng.sample(range(len(pts)), params.nodes))
    major_set = set(majors)

    vertex_docs = []
    for i, (lon, lat) in enumerate(pts):
        doc = {"id": f"v{i}", "lon": lon, "lat": lat}
        if i in major_set:
            doc["kind"] = "major"
            doc["label"] = f"N{majors.index(i) + 1}"
        else:
            doc["kind"] = "waypoint"
        vertex_docs.append(doc)

    edge_docs = []
    graph = nx.Graph()
    for k, (i, j) in enumerate(edge_list):
        eid = f"e{k}"
        edge_docs.append({"id": eid, "from": f"v{i}", "to": f"v{j}",
                          "geometry": [[pts[i][0], pts[i][1]], [pts[j][0], pts[j][1]]]})
        dist = math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1])
        graph.add_edge(i, j, weight=dist, eid=eid)

    n_routes = rng.randint(*params.route_count)
    route_docs = []
    for r in range(n_routes):
        n_stops = rng.randint(params.stops_per_route[0],
                              min(params.stops_per_route[1], params.nodes))
        stop_nodes: list[int] = []
        path_edges: list[str] = []
        # Retry stop samples until the concatenated shortest paths form a
        # simple edge chain: real-world routes don't backtrack over
        # themselves, and repeated edges make every later stage degenerate.
        for _ in range(40):
            candidate = rng.sample(majors, n_stops)
            edges = _simple_route_path(graph, candidate)
            if edges is not None:
                stop_nodes, path_edges = candidate, edges
                break
        if not path_edges:
            continue
        doc = {"id": f"r{r + 1}",
               "stops": [f"v{n}" for n in stop_nodes],
               "path": path_edges}
        if params.with_volumes:
            doc["volumes"] = [rng.randint(1, 10) for _ in range(n_stops - 1)]
        route_docs.append(doc)

    raw = json.dumps({"crs": "EPSG:4326", "vertices": vertex_docs,
                      "edges": edge_docs, "routes": route_docs})
    return parse_network(raw)


def _min_angle_deg(pts, simplex) -> float:
    a, b, c = (np.asarray(pts[int(k)]) for k in simplex)
    angles = []
    for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
        u, v = q - p, r - p
        den = np.linalg.norm(u) * np.linalg.norm(v)
        if den == 0:
            return 0.0
        angles.append(math.degrees(math.acos(np.clip(np.dot(u, v) / den, -1, 1))))
    return min(angles)


def _simple_route_path(graph: nx.Graph, stop_nodes: list[int]) -> list[str] | None:
    """Shortest-path chain through the stops, or None unless it is a simple path.

    Repeated vertices (not just edges) are rejected: a route that revisits an
    intersection doubles back over its own corridor, which makes the packed
    layout degenerate.
    """
    path_edges: list[str] = []
    visited: set[int] = {stop_nodes[0]}
    for a, b in zip(stop_nodes[:-1], stop_nodes[1:]):
        try:
            sp = nx.shortest_path(graph, a, b, weight="weight")
        except nx.NetworkXNoPath:
            return None
        for u, v in zip(sp[:-1], sp[1:]):
            if v in visited:
                return None
            visited.add(v)
            path_edges.append(graph.edges[u, v]["eid"])
    return path_edges or None


def generate_document(params: GenParams) -> str:
    """Generated network as canonical JSON text (byte-stable per seed)."""
    return serialize_network(generate(params))


def trial_pairs(net: RouteNetwork, count: int, seed: int) -> list[tuple[str, str, bool]]:
    """(nodeA, nodeB, connected?) tuples: connected means some route stops at both."""
    rng = random.Random(seed)
    majors = [v.id for v in net.vertices if v.kind == "major"]
    if len(majors) < 2:
        raise GenerationError("need at least 2 major nodes for trials")
    stop_sets = [set(r.stops) for r in net.routes]
    out = []
    for _ in range(count):
        a, b = rng.sample(majors, 2)
        connected = any(a in s and b in s for s in stop_sets)
        out.append((a, b, connected))
    return out
