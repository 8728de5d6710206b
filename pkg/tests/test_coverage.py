"""Coverage classifier tests: geometry, catalogs, events, policy."""

import math

import pytest
import requests

from abps_toolkit import coverage
from abps_toolkit.coverage import (
    AccessPoint,
    CatalogUnavailable,
    CoverageEvent,
    EventKind,
    LocalCatalog,
    NicActivation,
    RemoteCatalog,
    TrajectorySample,
    TtlCache,
    apply_policy,
    classify,
    classify_trajectory,
    extrapolate,
    haversine_m,
    load_trajectory,
    predict_coverage,
    query_aps,
)
from abps_toolkit.ctmc import ValidationError

# 1 meter in degrees of longitude at the equator
M = 180.0 / (math.pi * coverage.EARTH_RADIUS_M)


def walk(length_m, speed=1.0, step_s=1.0):
    """Straight equatorial walk eastwards, one sample per step."""
    n = int(length_m / speed / step_s)
    return [TrajectorySample(i * step_s, 0.0, i * step_s * speed * M) for i in range(n + 1)]


def ap(essid, x_m, radius, group=None):
    return AccessPoint(essid, 0.0, x_m * M, radius_m=radius, group=group)


def corridor_catalog():
    """A campus-network corridor plus isolated third-party points."""
    return [
        ap("campus-1", 40, 60, group="campusnet"),
        ap("campus-2", 120, 60, group="campusnet"),
        ap("campus-3", 200, 60, group="campusnet"),
        ap("campus-4", 280, 60, group="campusnet"),
        ap("cafe-hotspot", 150, 30),
        ap("bar-guests", 20, 25),
    ]


def endpoints_catalog():
    """Coverage only at both ends of the walk, nothing in the middle."""
    return [ap("park-wifi", 30, 50), ap("corner-shop", 470, 50)]


class TestGeometry:
    def test_haversine_known_distance(self):
        # one degree of longitude at the equator
        assert haversine_m(0, 0, 0, 1) == pytest.approx(
            coverage.EARTH_RADIUS_M * math.pi / 180, rel=1e-9
        )

    def test_query_containment(self):
        catalog = LocalCatalog([ap("one", 50, 30)])
        assert len(query_aps(catalog, 0.0, 0.0, 100.0)) == 1
        assert query_aps(catalog, 0.0, 0.0, 10.0) == []

    def test_query_monotone_in_radius(self):
        catalog = LocalCatalog(corridor_catalog())
        small = {a.essid for a in query_aps(catalog, 0.0, 150 * M, 100.0)}
        large = {a.essid for a in query_aps(catalog, 0.0, 150 * M, 250.0)}
        assert small <= large

    def test_query_validates_inputs(self):
        catalog = LocalCatalog([])
        with pytest.raises(ValidationError):
            query_aps(catalog, 91.0, 0.0, 10.0)
        with pytest.raises(ValidationError):
            query_aps(catalog, 0.0, 0.0, 0.0)

    def test_corridor_points_share_group(self):
        catalog = LocalCatalog(corridor_catalog())
        found = query_aps(catalog, 0.0, 160 * M, 120.0)
        corridor = [a for a in found if a.essid.startswith("campus")]
        assert len(corridor) >= 2
        assert {a.group for a in corridor} == {"campusnet"}


class TestPredictCoverage:
    def test_single_ap_chord_duration(self):
        # 30 m disc centered on a 1 m/s path: covered for the 60 m chord
        timeline = predict_coverage(walk(100), [ap("mid", 50, 30)])
        covered = [iv for iv in timeline if iv.covered]
        assert len(covered) == 1
        assert covered[0].duration == pytest.approx(60.0, abs=1e-3)
        assert covered[0].essids == ("mid",)

    def test_never_covered(self):
        timeline = predict_coverage(walk(100), [ap("far", 5000, 30)])
        assert len(timeline) == 1
        assert not timeline[0].covered
        assert timeline[0].duration == pytest.approx(100.0)

    def test_endpoints_fixture_three_intervals(self):
        timeline = predict_coverage(walk(500), endpoints_catalog())
        assert [iv.covered for iv in timeline] == [True, False, True]

    def test_partition_no_gaps_no_overlaps(self):
        track = walk(500)
        timeline = predict_coverage(track, corridor_catalog() + endpoints_catalog())
        assert timeline[0].start == track[0].t
        assert timeline[-1].end == track[-1].t
        for a, b in zip(timeline, timeline[1:]):
            assert a.end == pytest.approx(b.start, abs=1e-9)

    def test_same_group_merges_into_one_interval(self):
        timeline = predict_coverage(walk(360), corridor_catalog())
        covered = [iv for iv in timeline if iv.covered]
        assert len(covered) == 1
        assert "campusnet" in covered[0].groups
        assert covered[0].duration == pytest.approx(340.0, abs=0.5)

    def test_network_swap_splits_interval(self):
        # coverage gap smaller than the sample spacing; consecutive samples
        # are covered by different networks, so the interval splits at the
        # instant the first network's coverage runs out
        split_aps = [ap("alpha", 40, 50.3), ap("beta", 141, 50.3)]
        covered = [iv for iv in predict_coverage(walk(200), split_aps) if iv.covered]
        assert len(covered) == 2
        assert covered[0].end == pytest.approx(90.3, abs=1e-3)
        assert covered[0].essids == ("alpha",)
        assert covered[1].essids == ("beta",)
        same_group = [ap("alpha", 40, 50.3, "net"), ap("beta", 141, 50.3, "net")]
        covered = [iv for iv in predict_coverage(walk(200), same_group) if iv.covered]
        assert len(covered) == 1

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            predict_coverage([TrajectorySample(0, 0, 0)], [])


class TestClassify:
    def test_long_short_no_wifi(self):
        timeline = predict_coverage(walk(100), [ap("mid", 50, 30)])
        events = classify(timeline, threshold_s=40.0)
        kinds = [e.kind for e in events]
        assert EventKind.EV_LONG_WIFI in kinds  # the 60 s crossing
        short = classify(timeline, threshold_s=70.0)
        assert EventKind.EV_SHORT_WIFI in [e.kind for e in short]

    def test_exhaustive_and_exclusive(self):
        timeline = predict_coverage(walk(500), endpoints_catalog())
        events = classify(timeline)
        assert len(events) == len(timeline)
        for interval, event in zip(timeline, events):
            assert event.timestamp == interval.start
            if not interval.covered:
                assert event.kind is EventKind.EV_NO_WIFI
                assert event.duration is None
            elif interval.duration >= 40.0:
                assert event.kind is EventKind.EV_LONG_WIFI
            else:
                assert event.kind is EventKind.EV_SHORT_WIFI
                assert 0.0 < event.duration < 40.0

    def test_threshold_validation(self):
        with pytest.raises(ValidationError):
            classify([], threshold_s=0.0)


class TestPolicy:
    def test_policy_table(self):
        assert apply_policy(CoverageEvent(0, EventKind.EV_NO_WIFI)) == NicActivation(False, True)
        assert apply_policy(CoverageEvent(0, EventKind.EV_SHORT_WIFI)) == NicActivation(True, True)
        assert apply_policy(CoverageEvent(0, EventKind.EV_LONG_WIFI)) == NicActivation(True, False)

    def test_never_everything_off(self):
        for kind in EventKind:
            active = apply_policy(CoverageEvent(0, kind))
            assert active.active_wifi or active.active_umts


class TestUseCases:
    def test_corridor_switches_umts_off(self):
        events = classify_trajectory(walk(360), LocalCatalog(corridor_catalog()))
        long_events = [e for e in events if e.kind is EventKind.EV_LONG_WIFI]
        assert len(long_events) == 1
        assert apply_policy(long_events[0]).active_umts is False
        assert any(essid.startswith("campus") for essid in long_events[0].essids)

    def test_endpoints_keep_umts_on_in_the_middle(self):
        events = classify_trajectory(walk(500), LocalCatalog(endpoints_catalog()))
        kinds = [e.kind for e in events]
        assert EventKind.EV_NO_WIFI in kinds
        middle = events[kinds.index(EventKind.EV_NO_WIFI)]
        assert apply_policy(middle).active_umts is True
        assert apply_policy(middle).active_wifi is False


class TestCatalogFiles:
    def test_fixture_roundtrip(self, tmp_path):
        path = tmp_path / "aps.csv"
        path.write_text(
            "essid,lat,lon,radius_m,group,open\n"
            "campus-1,0.0,0.0003,60,campusnet,true\n"
            "cafe,0.0,0.0010,30,,false\n"
        )
        catalog = LocalCatalog(path)
        assert len(catalog.access_points) == 2
        assert catalog.access_points[0].group == "campusnet"
        assert catalog.access_points[1].group is None
        assert catalog.access_points[1].open is False
        assert catalog.skipped_records == 0

    def test_malformed_rows_skipped_with_count(self, tmp_path):
        path = tmp_path / "aps.csv"
        path.write_text(
            "essid,lat,lon,radius_m,group,open\n"
            "good,0.0,0.0,50,,true\n"
            "bad-lat,91.5,0.0,50,,true\n"
            "bad-radius,0.0,0.0,-3,,true\n"
            "bad-number,0.0,xyz,50,,true\n"
        )
        catalog = LocalCatalog(path)
        assert len(catalog.access_points) == 1
        assert catalog.skipped_records == 3

    def test_header_required(self, tmp_path):
        path = tmp_path / "aps.csv"
        path.write_text("campus-1,0.0,0.0003,60,campusnet,true\n")
        with pytest.raises(ValidationError, match="header"):
            LocalCatalog(path)

    def test_trajectory_roundtrip(self, tmp_path):
        path = tmp_path / "walk.csv"
        path.write_text("t,lat,lon,speed\n0,0.0,0.0,1.5\n1,0.0,0.0001,\n2,0.0,0.0002,1.4\n")
        track = load_trajectory(path)
        assert len(track) == 3
        assert track[0].speed == 1.5
        assert track[1].speed is None

    def test_trajectory_requires_increasing_time(self, tmp_path):
        path = tmp_path / "walk.csv"
        path.write_text("0,0.0,0.0\n0,0.0,0.0001\n")
        with pytest.raises(ValidationError, match="increase"):
            load_trajectory(path)


class FakeResponse:
    def __init__(self, status_code=200, payload=None, bad_json=False):
        self.status_code = status_code
        self._payload = payload or []
        self._bad_json = bad_json

    def json(self):
        if self._bad_json:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    def __init__(self, response=None, error=None):
        self.response = response
        self.error = error
        self.calls = []

    def get(self, url, params=None, headers=None, timeout=None):
        self.calls.append({"url": url, "params": params, "headers": headers})
        if self.error is not None:
            raise self.error
        return self.response


class TestRemoteCatalog:
    RECORD = {"essid": "remote-1", "lat": 0.0, "lon": 0.0003,
              "radius_m": 60, "group": "campusnet", "open": True}

    def test_query_parses_records(self):
        session = FakeSession(FakeResponse(payload=[self.RECORD]))
        catalog = RemoteCatalog("http://catalog.example/aps", session=session)
        found = catalog.query(0.0, 0.0, 500.0)
        assert [a.essid for a in found] == ["remote-1"]
        assert session.calls[0]["params"] == {"lat": 0.0, "lon": 0.0, "radius": 500.0}

    def test_credentials_from_environment(self, monkeypatch):
        monkeypatch.setenv(coverage.CATALOG_TOKEN_ENV, "sekrit")
        session = FakeSession(FakeResponse(payload=[]))
        RemoteCatalog("http://catalog.example/aps", session=session).query(0, 0, 10)
        assert session.calls[0]["headers"]["Authorization"] == "Bearer sekrit"

    def test_http_error_raises_unavailable(self):
        session = FakeSession(FakeResponse(status_code=503))
        with pytest.raises(CatalogUnavailable):
            RemoteCatalog("http://x", session=session).query(0, 0, 10)

    def test_network_error_raises_unavailable(self):
        session = FakeSession(error=requests.ConnectionError("nope"))
        with pytest.raises(CatalogUnavailable):
            RemoteCatalog("http://x", session=session).query(0, 0, 10)

    def test_malformed_body_raises_unavailable(self):
        session = FakeSession(FakeResponse(bad_json=True))
        with pytest.raises(CatalogUnavailable):
            RemoteCatalog("http://x", session=session).query(0, 0, 10)

    def test_malformed_records_skipped(self):
        session = FakeSession(
            FakeResponse(payload=[self.RECORD, {"essid": "broken", "lat": "x", "lon": 0}])
        )
        catalog = RemoteCatalog("http://x", session=session)
        assert len(catalog.query(0.0, 0.0, 500.0)) == 1
        assert catalog.skipped_records == 1

    def test_unavailable_degrades_to_short_wifi(self):
        session = FakeSession(error=requests.Timeout("slow"))
        catalog = RemoteCatalog("http://x", session=session)
        events = classify_trajectory(walk(100), catalog)
        assert [e.kind for e in events] == [EventKind.EV_SHORT_WIFI]
        assert apply_policy(events[0]) == NicActivation(True, True)


class TestTtlCache:
    def test_hits_within_ttl_and_expiry(self):
        clock = {"now": 0.0}
        inner = LocalCatalog([ap("one", 50, 30)])
        cache = TtlCache(inner, ttl_s=60.0, clock=lambda: clock["now"])
        first = cache.query(0.0, 0.0, 100.0)
        second = cache.query(0.0, 0.0, 100.0)
        assert first == second
        assert (cache.hits, cache.misses) == (1, 1)
        clock["now"] = 61.0
        cache.query(0.0, 0.0, 100.0)
        assert (cache.hits, cache.misses) == (1, 2)

    def test_different_keys_do_not_collide(self):
        cache = TtlCache(LocalCatalog([ap("one", 50, 30)]), ttl_s=60.0)
        assert len(cache.query(0.0, 0.0, 100.0)) == 1
        assert cache.query(0.0, 0.0, 10.0) == []


class TestExtrapolate:
    def test_linear_continuation(self):
        track = [TrajectorySample(0, 0.0, 0.0), TrajectorySample(10, 0.0, 10 * M)]
        extended = extrapolate(track, horizon_s=20.0, step_s=10.0)
        assert len(extended) == 4
        assert extended[-1].t == 30.0
        assert extended[-1].lon == pytest.approx(30 * M)

    def test_validation(self):
        with pytest.raises(ValidationError):
            extrapolate([TrajectorySample(0, 0, 0)], 10.0)
