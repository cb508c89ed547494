import numpy as np
import pytest

from helpers import corridor_instance, viewport_for
from routepack import packing
from routepack.model import Viewport
from routepack.packing import (
    OracleSizeError,
    PackedLayout,
    PackParams,
    RouteLayout,
    Stroke,
    brute_force_min_crossings,
    compute_offsets,
    corridor_delta,
    count_crossings,
    find_shared_subpaths,
    layout_from_json,
    layout_from_ranks,
    layout_to_json,
    pack,
    rank_routes,
)

_VP = Viewport(1000, 800, (0.0, 0.0, 1.0, 1.0))


def _one_stroke_layout(lines: dict[str, np.ndarray]) -> PackedLayout:
    routes = [RouteLayout(rid, 4.0, [Stroke("s0", 0, 0.0, pts)], [])
              for rid, pts in sorted(lines.items())]
    return PackedLayout(_VP, routes, [], 0, 1)


class TestSharedSubpaths:
    def test_single_corridor_detected(self):
        pg, n = corridor_instance(0)
        subpaths = find_shared_subpaths(pg)
        assert len(subpaths) == 1
        sp = subpaths[0]
        assert sp.segments == ("s0",)
        assert len(sp.routes) == n
        assert sp.reference == "r1"

    def test_all_routes_marked_same_direction(self):
        pg, _ = corridor_instance(1)
        sp = find_shared_subpaths(pg)[0]
        assert all(sp.same_direction.values())

    def test_single_route_shares_nothing(self):
        pg, _ = corridor_instance(2)
        pg.route_chains = {"r1": pg.route_chains["r1"]}
        assert find_shared_subpaths(pg) == []


class TestRanking:
    @pytest.mark.parametrize("seed", range(8))
    def test_ranks_form_permutation(self, seed):
        pg, n = corridor_instance(seed)
        subpaths = find_shared_subpaths(pg)
        ranks = rank_routes(subpaths, pg)
        ((_, rk),) = ranks.entries
        assert sorted(rk.values()) == list(range(n))

    @pytest.mark.parametrize("seed", range(8))
    def test_rank_order_follows_departure_delta(self, seed):
        pg, _ = corridor_instance(seed)
        sp = find_shared_subpaths(pg)[0]
        ranks = rank_routes([sp], pg)
        ((_, rk),) = ranks.entries
        deltas = {r: corridor_delta(sp, r, pg) for r in sp.routes}
        by_rank = sorted(sp.routes, key=lambda r: rk[r])
        assert [deltas[r] for r in by_rank] == sorted(deltas.values(), reverse=True)

    def test_terminal_route_gets_zero_delta(self):
        pg, _ = corridor_instance(3)
        # r1 now ends inside the corridor: no departure direction.
        pg.route_chains["r1"] = pg.route_chains["r1"][:2]
        sp = find_shared_subpaths(pg)[0]
        assert corridor_delta(sp, "r1", pg) == 0.0


class TestOffsets:
    def test_adjacent_spacing_and_centering(self):
        pg, _ = corridor_instance(4)
        sp = find_shared_subpaths(pg)[0]
        widths = {r: 4.0 for r in sp.routes}
        ranks = rank_routes([sp], pg)
        offsets, warnings = compute_offsets(ranks, widths, 2.0)
        assert warnings == []
        vals = sorted((offsets[(r, "s0")] for r in sp.routes), reverse=True)
        for a, b in zip(vals, vals[1:]):
            assert a - b == pytest.approx(6.0)  # (4+4)/2 + 2
        assert sum(vals) == pytest.approx(0.0, abs=1e-9)

    def test_mixed_widths_spacing(self):
        pg, n = corridor_instance(6)
        sp = find_shared_subpaths(pg)[0]
        widths = {r: 2.0 + 2.0 * i for i, r in enumerate(sp.routes)}
        ranks = rank_routes([sp], pg)
        offsets, _ = compute_offsets(ranks, widths, 2.0)
        by_rank = sorted(sp.routes, key=lambda r: dict(ranks.entries[0][1])[r])
        for a, b in zip(by_rank, by_rank[1:]):
            gapped = offsets[(a, "s0")] - offsets[(b, "s0")]
            assert gapped == pytest.approx((widths[a] + widths[b]) / 2 + 2.0)

    def test_bundle_width_warning(self):
        pg, _ = corridor_instance(5)
        sp = find_shared_subpaths(pg)[0]
        widths = {r: 40.0 for r in sp.routes}
        ranks = rank_routes([sp], pg)
        _, warnings = compute_offsets(ranks, widths, 2.0, max_bundle=60.0)
        assert warnings and warnings[0]["type"] == "over-dense"
        assert warnings[0]["bundleWidth"] > 60.0

    def test_negative_gap_rejected(self):
        with pytest.raises(ValueError):
            compute_offsets(packing.RankAssignment(), {}, -1.0)


class TestCrossings:
    def test_x_crossing_counts_one(self):
        layout = _one_stroke_layout({
            "r1": np.array([[0.0, 0.0], [100.0, 100.0]]),
            "r2": np.array([[0.0, 100.0], [100.0, 0.0]]),
        })
        assert count_crossings(layout) == 1

    def test_disjoint_routes_count_zero(self):
        layout = _one_stroke_layout({
            "r1": np.array([[0.0, 0.0], [100.0, 0.0]]),
            "r2": np.array([[0.0, 50.0], [100.0, 50.0]]),
        })
        assert count_crossings(layout) == 0

    def test_shared_terminus_not_a_crossing(self):
        layout = _one_stroke_layout({
            "r1": np.array([[0.0, 0.0], [50.0, 50.0]]),
            "r2": np.array([[100.0, 0.0], [50.0, 50.0]]),
        })
        assert count_crossings(layout) == 0


class TestOracle:
    @pytest.mark.parametrize("seed", range(6))
    def test_algorithm_matches_brute_force(self, seed):
        pg, _ = corridor_instance(seed)
        widths = {r: 4.0 for r in pg.route_chains}
        subpaths = find_shared_subpaths(pg)
        ranks = rank_routes(subpaths, pg)
        layout, _ = layout_from_ranks(pg, subpaths, ranks.entries, widths,
                                      _VP, PackParams())
        assert layout.crossings == brute_force_min_crossings(
            subpaths, pg, widths, _VP, PackParams())

    def test_oversized_instance_rejected(self):
        pg, _ = corridor_instance(0)
        sp = find_shared_subpaths(pg)[0]
        sp.routes = tuple(f"r{i}" for i in range(9))
        with pytest.raises(OracleSizeError):
            brute_force_min_crossings([sp], pg, {}, _VP, PackParams(),
                                      max_routes=7)


class TestPack:
    def test_twin_fixture_offsets(self, twin_network, twin_viewport):
        layout = pack(twin_network, twin_viewport, PackParams())
        assert not [r for r in layout.residual if r["type"] == "overlap"]
        corridor = sorted(
            round(s.offset, 3)
            for rl in layout.routes for s in rl.strokes if abs(s.offset) > 0.1)
        assert corridor == [-3.0, 3.0]  # (4+4)/2 + 2 gap, centered

    def test_triple_fixture_converges_without_crossings(
            self, triple_network, triple_viewport):
        layout = pack(triple_network, triple_viewport, PackParams())
        assert not [r for r in layout.residual if r["type"] == "overlap"]
        assert layout.crossings == 0
        assert layout.iterations <= 3

    def test_separation_invariant_on_twin(self, twin_network, twin_viewport):
        from routepack import geom

        def interior(pts: np.ndarray, trim: float = 18.0) -> np.ndarray:
            # Offsets blend to zero at junctions; the invariant applies to
            # the corridor interior, away from the convergence zones.
            rs = geom.resample(pts, 1.0)
            s = geom.arclengths(rs)
            keep = (s >= trim) & (s <= s[-1] - trim)
            return rs[keep]

        layout = pack(twin_network, twin_viewport, PackParams())
        by_seg: dict[str, list[tuple[float, np.ndarray]]] = {}
        for rl in layout.routes:
            for s in rl.strokes:
                by_seg.setdefault(s.seg_id, []).append((rl.width, s.points))
        checked = 0
        for entries in by_seg.values():
            for i in range(len(entries)):
                for j in range(i + 1, len(entries)):
                    wi, pi = entries[i]
                    wj, pj = entries[j]
                    pi, pj = interior(pi), interior(pj)
                    if len(pi) < 2 or len(pj) < 2:
                        continue
                    need = (wi + wj) / 2 + 2.0 - 0.5
                    assert geom.min_polyline_distance(pi, pj) >= need
                    checked += 1
        assert checked >= 1

    def test_pack_is_deterministic(self, twin_network, twin_viewport):
        a = layout_to_json(pack(twin_network, twin_viewport, PackParams()))
        b = layout_to_json(pack(twin_network, twin_viewport, PackParams()))
        assert a == b

    def test_stops_recorded_in_route_order(self, twin_network, twin_viewport):
        layout = pack(twin_network, twin_viewport, PackParams())
        for rl in layout.routes:
            route = next(r for r in twin_network.routes if r.id == rl.id)
            assert [s["vertexId"] for s in rl.stops] == list(route.stops)


class TestLayoutSerialization:
    def test_round_trip(self, twin_network, twin_viewport):
        layout = pack(twin_network, twin_viewport, PackParams())
        again = layout_from_json(layout_to_json(layout))
        assert layout_to_json(again) == layout_to_json(layout)
        assert [rl.id for rl in again.routes] == [rl.id for rl in layout.routes]

    def test_malformed_json_raises(self):
        with pytest.raises((KeyError, ValueError)):
            layout_from_json("{}")
