import json
import math

import pytest
from hypothesis import given, strategies as st

from helpers import network_doc, twin_network_doc
from routepack.model import (
    GeoPoint,
    NetworkValidationError,
    Projector,
    Viewport,
    legs_of,
    parse_network,
    route_chain,
    serialize_network,
)


def _doc(**overrides):
    base = json.loads(twin_network_doc())
    base.update(overrides)
    return json.dumps(base)


class TestParsing:
    def test_round_trip(self):
        net = parse_network(twin_network_doc())
        again = parse_network(serialize_network(net))
        assert again == net

    def test_serialization_is_stable(self):
        net = parse_network(twin_network_doc())
        assert serialize_network(net) == serialize_network(parse_network(serialize_network(net)))

    def test_accepts_bytes(self):
        assert parse_network(twin_network_doc().encode()).routes

    def test_unknown_top_level_field_rejected(self):
        with pytest.raises(NetworkValidationError):
            parse_network(_doc(extra=1))

    def test_missing_vertices_rejected(self):
        doc = json.loads(twin_network_doc())
        del doc["vertices"]
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))

    def test_duplicate_vertex_id_rejected(self):
        doc = json.loads(twin_network_doc())
        doc["vertices"].append(dict(doc["vertices"][0]))
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))

    def test_edge_referencing_unknown_vertex_rejected(self):
        doc = json.loads(twin_network_doc())
        doc["edges"][0]["from"] = "nope"
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))

    def test_route_with_unknown_edge_rejected(self):
        doc = json.loads(twin_network_doc())
        doc["routes"][0]["path"] = ["missing"]
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))

    def test_route_with_single_stop_rejected(self):
        doc = json.loads(twin_network_doc())
        doc["routes"][0]["stops"] = doc["routes"][0]["stops"][:1]
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))

    def test_latitude_out_of_mercator_range_rejected(self):
        doc = json.loads(twin_network_doc())
        doc["vertices"][0]["lat"] = 89.9
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))

    def test_discontinuous_route_path_rejected(self):
        doc = network_doc(
            [("a", 0.1, 0.1), ("b", 0.2, 0.1), ("c", 0.4, 0.1), ("d", 0.5, 0.1)],
            [("e0", "a", "b", [(0.1, 0.1), (0.2, 0.1)]),
             ("e1", "c", "d", [(0.4, 0.1), (0.5, 0.1)])],
            [{"id": "r1", "stops": ["a", "d"], "path": ["e0", "e1"]}])
        with pytest.raises(NetworkValidationError):
            parse_network(doc)

    def test_volume_count_must_match_leg_count(self):
        doc = json.loads(twin_network_doc())
        doc["routes"][0]["volumes"] = [1, 2, 3]  # 2 stops -> 1 leg
        with pytest.raises(NetworkValidationError):
            parse_network(json.dumps(doc))


class TestGeoPoint:
    def test_bounds_enforced(self):
        with pytest.raises(NetworkValidationError):
            GeoPoint(181.0, 0.0)
        with pytest.raises(NetworkValidationError):
            GeoPoint(0.0, float("nan"))

    def test_valid_point(self):
        p = GeoPoint(-122.3, 47.6)
        assert (p.lon, p.lat) == (-122.3, 47.6)


class TestRouteChain:
    def test_chain_orients_edges(self, twin_network):
        r = twin_network.routes[0]
        chain, stop_indices = route_chain(r, twin_network)
        assert len(chain) == len(r.path) + 1
        assert chain[0] == r.stops[0] and chain[-1] == r.stops[-1]
        assert [chain[i] for i in stop_indices] == list(r.stops)

    def test_legs_cover_route(self, twin_network):
        r = twin_network.routes[0]
        legs = legs_of(r, twin_network)
        assert len(legs) == len(r.stops) - 1
        assert [e for leg in legs for e in leg.edges] == list(r.path)
        assert legs[0].start == r.stops[0]
        assert legs[-1].end == r.stops[-1]


class TestViewportProjection:
    def test_viewport_validation(self):
        with pytest.raises(ValueError):
            Viewport(0, 100, (0, 0, 1, 1))
        with pytest.raises(ValueError):
            Viewport(100, 100, (1, 0, 0, 1))

    def test_projection_lands_inside_padded_viewport(self, twin_network):
        vp = Viewport(1200, 800, twin_network.bounding_box(), 40.0)
        proj = Projector(vp)
        for v in twin_network.vertices:
            x, y = proj.project(v.position)
            assert 40.0 - 1e-6 <= x <= 1160.0 + 1e-6
            assert 40.0 - 1e-6 <= y <= 760.0 + 1e-6

    def test_y_axis_points_down(self):
        vp = Viewport(100, 100, (0.0, 0.0, 1.0, 1.0))
        proj = Projector(vp)
        _, y_lo = proj.project(GeoPoint(0.5, 0.1))
        _, y_hi = proj.project(GeoPoint(0.5, 0.9))
        assert y_hi < y_lo  # higher latitude renders nearer the top

    @given(lon=st.floats(-179.0, 179.0), lat=st.floats(-80.0, 80.0))
    def test_projection_is_monotone_in_longitude(self, lon, lat):
        vp = Viewport(500, 500, (-180.0, -81.0, 180.0, 81.0))
        proj = Projector(vp)
        x0, _ = proj.project(GeoPoint(lon, lat))
        x1, _ = proj.project(GeoPoint(min(lon + 1.0, 180.0), lat))
        assert x1 > x0

    def test_aspect_preserved(self):
        # Mercator scale is isotropic: equal geographic steps near the
        # equator project to equal pixel steps in x and y.
        vp = Viewport(1000, 1000, (0.0, -0.5, 1.0, 0.5))
        proj = Projector(vp)
        x0, y0 = proj.project(GeoPoint(0.4, 0.0))
        x1, y1 = proj.project(GeoPoint(0.6, 0.0))
        x2, y2 = proj.project(GeoPoint(0.5, -0.1))
        x3, y3 = proj.project(GeoPoint(0.5, 0.1))
        assert math.isclose(x1 - x0, y2 - y3, rel_tol=1e-3)


class TestBoundingBoxes:
    def test_route_bbox_subset_of_full_bbox(self, twin_network):
        full = twin_network.bounding_box()
        routed = twin_network.route_bounding_box()
        assert full[0] <= routed[0] and full[1] <= routed[1]
        assert full[2] >= routed[2] and full[3] >= routed[3]

    def test_route_bbox_ignores_untraversed_edges(self):
        doc = network_doc(
            [("a", 0.1, 0.1), ("b", 0.2, 0.1), ("c", 0.9, 0.9)],
            [("e0", "a", "b", [(0.1, 0.1), (0.2, 0.1)]),
             ("e1", "b", "c", [(0.2, 0.1), (0.9, 0.9)])],
            [{"id": "r1", "stops": ["a", "b"], "path": ["e0"]}])
        net = parse_network(doc)
        assert net.route_bounding_box() == (0.1, 0.1, 0.2, 0.1)
