"""Georeferenced route-network data model: ingestion, validation, projection.

The network is a graph of vertices and edges with real geographic geometry,
plus routes defined as ordered stop lists realized by chains of edges.  All
geometry math downstream of this module happens in screen pixels; this module
owns the only degrees-to-pixels conversion (Web Mercator, viewport-fitted).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

MERCATOR_MAX_LAT = 85.0511
_ENDPOINT_TOL_DEG = 1e-9


class NetworkValidationError(ValueError):
    """Raised when a network document violates the schema or an invariant."""


class OutOfViewportError(ValueError):
    """Raised when projecting a point outside the viewport bounds."""


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise NetworkValidationError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise NetworkValidationError(f"longitude {self.lon} outside [-180, 180]")
        if not -MERCATOR_MAX_LAT < self.lat < MERCATOR_MAX_LAT:
            raise NetworkValidationError(
                f"latitude {self.lat} outside Mercator-safe range (+-{MERCATOR_MAX_LAT})"
            )


@dataclass(frozen=True)
class Vertex:
    id: str
    position: GeoPoint
    label: str | None = None
    kind: str = "waypoint"  # "major" or "waypoint"


@dataclass(frozen=True)
class Edge:
    id: str
    frm: str
    to: str
    geometry: tuple[GeoPoint, ...]


@dataclass(frozen=True)
class Route:
    id: str
    stops: tuple[str, ...]
    path: tuple[str, ...]
    volumes: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Leg:
    route_id: str
    start: str
    end: str
    edges: tuple[str, ...]


@dataclass(frozen=True)
class Viewport:
    width: float
    height: float
    bounds: tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max
    padding: float = 0.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("viewport dimensions must be positive")
        lon0, lat0, lon1, lat1 = self.bounds
        if not (lon1 > lon0 and lat1 > lat0):
            raise ValueError("viewport bounds must be non-degenerate")


@dataclass(frozen=True)
class RouteNetwork:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    routes: tuple[Route, ...]
    vertex_by_id: dict[str, Vertex] = field(compare=False, hash=False, default_factory=dict)
    edge_by_id: dict[str, Edge] = field(compare=False, hash=False, default_factory=dict)

    @staticmethod
    def build(vertices: Iterable[Vertex], edges: Iterable[Edge], routes: Iterable[Route]) -> "RouteNetwork":
        vs, es, rs = tuple(vertices), tuple(edges), tuple(routes)
        net = RouteNetwork(vs, es, rs, {v.id: v for v in vs}, {e.id: e for e in es})
        _validate_network(net)
        return net

    def bounding_box(self) -> tuple[float, float, float, float]:
        pts = [p for e in self.edges for p in e.geometry] or [v.position for v in self.vertices]
        if not pts:
            raise ValueError("empty network has no bounding box")
        return (
            min(p.lon for p in pts),
            min(p.lat for p in pts),
            max(p.lon for p in pts),
            max(p.lat for p in pts),
        )

    def route_bounding_box(self) -> tuple[float, float, float, float]:
        """Bounding box of the geometry actually traversed by routes."""
        edge_ids = {eid for r in self.routes for eid in r.path}
        pts = [p for e in self.edges if e.id in edge_ids for p in e.geometry]
        if not pts:
            return self.bounding_box()
        return (
            min(p.lon for p in pts),
            min(p.lat for p in pts),
            max(p.lon for p in pts),
            max(p.lat for p in pts),
        )


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------

_VERTEX_FIELDS = {"id", "lon", "lat", "label", "kind"}
_EDGE_FIELDS = {"id", "from", "to", "geometry"}
_ROUTE_FIELDS = {"id", "stops", "path", "volumes"}
_TOP_FIELDS = {"crs", "vertices", "edges", "routes"}


def _fail(path: str, msg: str) -> None:
    raise NetworkValidationError(f"{path}: {msg}")


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        _fail(path, f"missing required field '{key}'")
    return obj[key]


def _reject_unknown(obj: dict, allowed: set[str], path: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        _fail(f"{path}.{sorted(unknown)[0]}", "unknown field rejected")


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def parse_network(document: bytes | str | IO) -> RouteNetwork:
    """Parse and validate a network JSON document.

    Raises NetworkValidationError naming the offending JSON path on schema
    violations, dangling references, disconnected route paths, or
    volume-length mismatches.
    """
    if hasattr(document, "read"):
        document = document.read()
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise NetworkValidationError(f"document: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        _fail("document", "top level must be an object")
    _reject_unknown(doc, _TOP_FIELDS, "document")
    if _require(doc, "crs", "document") != "EPSG:4326":
        _fail("document.crs", "must be 'EPSG:4326'")

    vertices = []
    raw_vertices = _require(doc, "vertices", "document")
    if not isinstance(raw_vertices, list):
        _fail("document.vertices", "must be an array")
    for i, rv in enumerate(raw_vertices):
        path = f"vertices[{i}]"
        if not isinstance(rv, dict):
            _fail(path, "must be an object")
        _reject_unknown(rv, _VERTEX_FIELDS, path)
        vid = _require(rv, "id", path)
        if not isinstance(vid, str) or not vid:
            _fail(f"{path}.id", "must be a non-empty string")
        try:
            pos = GeoPoint(_number(_require(rv, "lon", path), f"{path}.lon"),
                           _number(_require(rv, "lat", path), f"{path}.lat"))
        except NetworkValidationError as exc:
            _fail(path, str(exc))
        label = rv.get("label")
        if label is not None and not isinstance(label, str):
            _fail(f"{path}.label", "must be a string")
        kind = rv.get("kind", "waypoint")
        if kind not in ("major", "waypoint"):
            _fail(f"{path}.kind", "must be 'major' or 'waypoint'")
        vertices.append(Vertex(vid, pos, label, kind))

    edges = []
    raw_edges = _require(doc, "edges", "document")
    if not isinstance(raw_edges, list):
        _fail("document.edges", "must be an array")
    for i, re_ in enumerate(raw_edges):
        path = f"edges[{i}]"
        if not isinstance(re_, dict):
            _fail(path, "must be an object")
        _reject_unknown(re_, _EDGE_FIELDS, path)
        eid = _require(re_, "id", path)
        geom_raw = _require(re_, "geometry", path)
        if not isinstance(geom_raw, list) or len(geom_raw) < 2:
            _fail(f"{path}.geometry", "must be an array of >= 2 [lon, lat] pairs")
        geom = []
        for j, pair in enumerate(geom_raw):
            if not isinstance(pair, list) or len(pair) != 2:
                _fail(f"{path}.geometry[{j}]", "must be a [lon, lat] pair")
            geom.append(GeoPoint(_number(pair[0], f"{path}.geometry[{j}][0]"),
                                 _number(pair[1], f"{path}.geometry[{j}][1]")))
        edges.append(Edge(eid, _require(re_, "from", path), _require(re_, "to", path), tuple(geom)))

    routes = []
    raw_routes = _require(doc, "routes", "document")
    if not isinstance(raw_routes, list):
        _fail("document.routes", "must be an array")
    for i, rr in enumerate(raw_routes):
        path = f"routes[{i}]"
        if not isinstance(rr, dict):
            _fail(path, "must be an object")
        _reject_unknown(rr, _ROUTE_FIELDS, path)
        stops = _require(rr, "stops", path)
        epath = _require(rr, "path", path)
        if not isinstance(stops, list) or len(stops) < 2:
            _fail(f"{path}.stops", "must be an array of >= 2 vertex ids")
        if not isinstance(epath, list) or len(epath) < 1:
            _fail(f"{path}.path", "must be an array of >= 1 edge ids")
        volumes = rr.get("volumes")
        if volumes is not None:
            if not isinstance(volumes, list):
                _fail(f"{path}.volumes", "must be an array of positive numbers")
            volumes = tuple(_number(v, f"{path}.volumes[{k}]") for k, v in enumerate(volumes))
            if any(v <= 0 for v in volumes):
                _fail(f"{path}.volumes", "volumes must be positive")
        routes.append(Route(_require(rr, "id", path), tuple(stops), tuple(epath), volumes))

    return RouteNetwork.build(vertices, edges, routes)


def serialize_network(net: RouteNetwork) -> str:
    """Serialize to the same JSON schema accepted by parse_network."""
    doc = {
        "crs": "EPSG:4326",
        "vertices": [
            {k: v for k, v in (
                ("id", v_.id), ("lon", v_.position.lon), ("lat", v_.position.lat),
                ("label", v_.label), ("kind", v_.kind),
            ) if v is not None}
            for v_ in net.vertices
        ],
        "edges": [
            {"id": e.id, "from": e.frm, "to": e.to,
             "geometry": [[p.lon, p.lat] for p in e.geometry]}
            for e in net.edges
        ],
        "routes": [
            {k: v for k, v in (
                ("id", r.id), ("stops", list(r.stops)), ("path", list(r.path)),
                ("volumes", list(r.volumes) if r.volumes is not None else None),
            ) if v is not None}
            for r in net.routes
        ],
    }
    return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# Semantic validation
# ---------------------------------------------------------------------------

def _validate_network(net: RouteNetwork) -> None:
    seen: set[str] = set()
    for v in net.vertices:
        if v.id in seen:
            _fail(f"vertices[{v.id}]", "duplicate vertex id")
        seen.add(v.id)
    seen.clear()
    for e in net.edges:
        if e.id in seen:
            _fail(f"edges[{e.id}]", "duplicate edge id")
        seen.add(e.id)
        for end, vid in (("from", e.frm), ("to", e.to)):
            if vid not in net.vertex_by_id:
                _fail(f"edges[{e.id}].{end}", f"dangling vertex reference '{vid}'")
        for j in range(len(e.geometry) - 1):
            a, b = e.geometry[j], e.geometry[j + 1]
            if a.lon == b.lon and a.lat == b.lat:
                _fail(f"edges[{e.id}].geometry[{j}]", "degenerate geometry (repeated point)")
        for which, vid, pt in (("first", e.frm, e.geometry[0]), ("last", e.to, e.geometry[-1])):
            vp = net.vertex_by_id[vid].position
            if abs(vp.lon - pt.lon) > _ENDPOINT_TOL_DEG or abs(vp.lat - pt.lat) > _ENDPOINT_TOL_DEG:
                _fail(f"edges[{e.id}].geometry",
                      f"{which} point does not coincide with vertex '{vid}'")
    seen.clear()
    for r in net.routes:
        if r.id in seen:
            _fail(f"routes[{r.id}]", "duplicate route id")
        seen.add(r.id)
        for s in r.stops:
            if s not in net.vertex_by_id:
                _fail(f"routes[{r.id}].stops", f"dangling vertex reference '{s}'")
        for eid in r.path:
            if eid not in net.edge_by_id:
                _fail(f"routes[{r.id}].path", f"dangling edge reference '{eid}'")
        if r.volumes is not None and len(r.volumes) != len(r.stops) - 1:
            _fail(f"routes[{r.id}].volumes",
                  f"length {len(r.volumes)} != leg count {len(r.stops) - 1}")
        route_chain(r, net)  # raises on disconnection / misplaced stops


def route_chain(route: Route, net: RouteNetwork) -> tuple[list[str], list[int]]:
    """Orient the route's edge path into a vertex chain and locate its stops.

    Returns (chain vertex ids, chain index of each stop).  Raises
    NetworkValidationError on a broken chain or out-of-order stops; the
    disconnection message names the last stop reached before the break.
    """
    rid = route.id
    edges = [net.edge_by_id[eid] for eid in route.path]
    first = edges[0]
    if len(edges) == 1:
        if first.frm == route.stops[0]:
            chain = [first.frm, first.to]
        elif first.to == route.stops[0]:
            chain = [first.to, first.frm]
        else:
            raise NetworkValidationError(
                f"disconnected route path {rid} at {route.stops[0]}")
    else:
        nxt = edges[1]
        shared = {first.frm, first.to} & {nxt.frm, nxt.to}
        if not shared:
            raise NetworkValidationError(f"disconnected route path {rid} at {route.stops[0]}")
        if len(shared) == 2:
            start = route.stops[0] if route.stops[0] in shared else first.frm
        else:
            link = shared.pop()
            start = first.to if link == first.frm else first.frm
        chain = [start, first.to if start == first.frm else first.frm]
        for e in edges[1:]:
            cur = chain[-1]
            if e.frm == cur:
                chain.append(e.to)
            elif e.to == cur:
                chain.append(e.frm)
            else:
                last_stop = route.stops[0]
                for v in chain:
                    if v in route.stops:
                        last_stop = v
                raise NetworkValidationError(f"disconnected route path {rid} at {last_stop}")
    # Stops must appear on the chain in order; the terminal stops bound it.
    indices: list[int] = []
    pos = 0
    for s in route.stops:
        while pos < len(chain) and chain[pos] != s:
            pos += 1
        if pos >= len(chain):
            raise NetworkValidationError(
                f"routes[{rid}]: stop '{s}' not on path chain in order")
        indices.append(pos)
        pos += 1
    if indices[0] != 0 or indices[-1] != len(chain) - 1:
        raise NetworkValidationError(
            f"routes[{rid}]: terminal stops must bound the path chain")
    return chain, indices


def legs_of(route: Route, net: RouteNetwork) -> list[Leg]:
    """Split a validated route into its consecutive-stop legs.

    The concatenated edge sub-lists equal route.path exactly.
    """
    _, idx = route_chain(route, net)
    legs = []
    for k in range(len(route.stops) - 1):
        legs.append(Leg(route.id, route.stops[k], route.stops[k + 1],
                        tuple(route.path[idx[k]:idx[k + 1]])))
    return legs


# ---------------------------------------------------------------------------
# Web Mercator projection, viewport-fitted
# ---------------------------------------------------------------------------

def _mercator(lon: float, lat: float) -> tuple[float, float]:
    return math.radians(lon), math.log(math.tan(math.pi / 4 + math.radians(lat) / 2))


class Projector:
    """Web Mercator projection fitted to a viewport (y-down pixels).

    The geographic bounds map into the padded pixel box with preserved
    aspect ratio, centered.  Pure and deterministic.
    """

    def __init__(self, vp: Viewport):
        lon0, lat0, lon1, lat1 = vp.bounds
        mx0, my0 = _mercator(lon0, lat0)
        mx1, my1 = _mercator(lon1, lat1)
        inner_w = vp.width - 2 * vp.padding
        inner_h = vp.height - 2 * vp.padding
        if inner_w <= 0 or inner_h <= 0:
            raise ValueError("padding leaves no drawable area")
        self.scale = min(inner_w / (mx1 - mx0), inner_h / (my1 - my0))
        self._mcx, self._mcy = (mx0 + mx1) / 2, (my0 + my1) / 2
        self._cx, self._cy = vp.width / 2, vp.height / 2
        self.vp = vp

    def project(self, p: GeoPoint) -> tuple[float, float]:
        mx, my = _mercator(p.lon, p.lat)
        x = self._cx + (mx - self._mcx) * self.scale
        y = self._cy - (my - self._mcy) * self.scale
        eps = 1e-6
        if not (-eps <= x <= self.vp.width + eps and -eps <= y <= self.vp.height + eps):
            raise OutOfViewportError(
                f"point ({p.lon}, {p.lat}) projects to ({x:.2f}, {y:.2f}) outside viewport")
        return x, y


def project(p: GeoPoint, vp: Viewport) -> tuple[float, float]:
    """Project a geographic point into viewport pixels (y-down)."""
    return Projector(vp).project(p)
