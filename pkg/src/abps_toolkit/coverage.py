"""WiFi coverage prediction along a trajectory and the NIC activation policy.

A catalog of geolocated access points (a local fixture file or a remote
lookup service) feeds a classifier that walks a trajectory, splits it into
covered and uncovered intervals, and emits one of three events per
interval: no WiFi ahead, WiFi for a short while, WiFi for a long while.
The activation policy maps events to which interfaces stay powered.

Coverage is disc-based: a point is covered while it sits within some
access point's radius. Access points sharing a network group are treated
as one network, so walking across them keeps a single coverage interval
alive (link-layer roaming); coverage with no persisting network splits at
the handover point. Interval edges are located by bisecting the interpolated
position between trajectory samples, so sub-sample precision comes for free;
blips smaller than the sample spacing are invisible by construction.
"""

from __future__ import annotations

import csv
import enum
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import requests

from abps_toolkit.ctmc import ValidationError

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_AP_RADIUS_M = 50.0
DEFAULT_LONG_THRESHOLD_S = 40.0
CATALOG_TOKEN_ENV = "ABPS_CATALOG_TOKEN"

CATALOG_FIELDS = ("essid", "lat", "lon", "radius_m", "group", "open")


class CatalogUnavailable(RuntimeError):
    """The access-point catalog could not be reached or answered an error."""


class EventKind(enum.Enum):
    EV_NO_WIFI = "EV_NO_WIFI"
    EV_SHORT_WIFI = "EV_SHORT_WIFI"
    EV_LONG_WIFI = "EV_LONG_WIFI"


class NicActivation(NamedTuple):
    active_wifi: bool
    active_umts: bool


@dataclass(frozen=True)
class AccessPoint:
    essid: str
    lat: float
    lon: float
    radius_m: float = DEFAULT_AP_RADIUS_M
    group: str | None = None
    open: bool = True

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        if not (self.radius_m > 0.0):
            raise ValidationError("coverage radius must be positive")


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    lat: float
    lon: float
    speed: float | None = None


@dataclass(frozen=True)
class CoverageInterval:
    start: float
    end: float
    covered: bool
    essids: tuple[str, ...] = ()
    groups: tuple[str, ...] = ()

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class CoverageEvent:
    """One classifier decision; duration is None when unknown or uncovered."""

    timestamp: float
    kind: EventKind
    duration: float | None = None
    essids: tuple[str, ...] = ()


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


# ---------------------------------------------------------------------------
# Catalog sources


class LocalCatalog:
    """Fixture-backed catalog: a CSV with header essid,lat,lon,radius_m,group,open."""

    def __init__(self, source) -> None:
        self.skipped_records = 0
        if isinstance(source, (str, Path)):
            with open(source, "r", encoding="utf-8", newline="") as fh:
                self.access_points = self._parse(fh)
        else:
            self.access_points = list(source)

    def _parse(self, fh) -> list[AccessPoint]:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("catalog file is empty")
        if tuple(h.strip() for h in header) != CATALOG_FIELDS:
            raise ValidationError(
                f"catalog header must be {','.join(CATALOG_FIELDS)}"
            )
        aps = []
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            ap = _record_to_ap({k: v.strip() for k, v in zip(CATALOG_FIELDS, row)})
            if ap is None:
                self.skipped_records += 1
            else:
                aps.append(ap)
        return aps

    def query(self, lat: float, lon: float, radius: float) -> list[AccessPoint]:
        return _within(self.access_points, lat, lon, radius)


class RemoteCatalog:
    """HTTP catalog client: GET with lat/lon/radius, records come back as JSON.

    Credentials, when needed, are read from the environment variable named
    by ``token_env`` and sent as a bearer token.
    """

    def __init__(self, base_url: str, timeout_s: float = 10.0,
                 token_env: str = CATALOG_TOKEN_ENV, session=None) -> None:
        self.base_url = base_url
        self.timeout_s = timeout_s
        self.token_env = token_env
        self.session = session or requests
        self.skipped_records = 0

    def query(self, lat: float, lon: float, radius: float) -> list[AccessPoint]:
        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = self.session.get(
                self.base_url,
                params={"lat": lat, "lon": lon, "radius": radius},
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as err:
            raise CatalogUnavailable(f"catalog request failed: {err}") from err
        if response.status_code != 200:
            raise CatalogUnavailable(
                f"catalog answered HTTP {response.status_code}"
            )
        try:
            records = response.json()
        except ValueError as err:
            raise CatalogUnavailable("catalog answered malformed JSON") from err
        aps = []
        for record in records:
            ap = _record_to_ap(record)
            if ap is None:
                self.skipped_records += 1
            else:
                aps.append(ap)
        # the service already filters; re-check locally so the contract holds
        return _within(aps, lat, lon, radius)


class TtlCache:
    """Thread-safe TTL cache in front of any catalog source."""

    def __init__(self, catalog, ttl_s: float = 300.0, clock=time.monotonic) -> None:
        self.catalog = catalog
        self.ttl_s = ttl_s
        self.clock = clock
        self._lock = threading.Lock()
        self._entries: dict[tuple, tuple[float, list[AccessPoint]]] = {}
        self.hits = 0
        self.misses = 0

    def query(self, lat: float, lon: float, radius: float) -> list[AccessPoint]:
        key = (round(lat, 7), round(lon, 7), round(radius, 3))
        now = self.clock()
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None and hit[0] > now:
                self.hits += 1
                return list(hit[1])
        result = self.catalog.query(lat, lon, radius)
        with self._lock:
            self.misses += 1
            self._entries[key] = (now + self.ttl_s, list(result))
        return list(result)


def _record_to_ap(record) -> AccessPoint | None:
    try:
        group = (record.get("group") or "").strip() or None
        raw_open = str(record.get("open", "true")).strip().lower()
        if raw_open not in ("true", "false", "1", "0", "yes", "no"):
            return None
        return AccessPoint(
            essid=str(record["essid"]),
            lat=float(record["lat"]),
            lon=float(record["lon"]),
            radius_m=float(record.get("radius_m") or DEFAULT_AP_RADIUS_M),
            group=group,
            open=raw_open in ("true", "1", "yes"),
        )
    except (KeyError, TypeError, ValueError, ValidationError):
        return None


def _within(aps: Iterable[AccessPoint], lat: float, lon: float, radius: float) -> list[AccessPoint]:
    found = [ap for ap in aps if haversine_m(lat, lon, ap.lat, ap.lon) <= radius]
    found.sort(key=lambda ap: (haversine_m(lat, lon, ap.lat, ap.lon), ap.essid))
    return found


def query_aps(catalog, lat: float, lon: float, radius: float) -> list[AccessPoint]:
    """All catalog access points within ``radius`` meters of the position."""
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise ValidationError(f"invalid coordinates ({lat}, {lon})")
    if not (radius > 0.0):
        raise ValidationError("query radius must be positive")
    return catalog.query(lat, lon, radius)


# ---------------------------------------------------------------------------
# Trajectories


def load_trajectory(path) -> list[TrajectorySample]:
    """Read a ``t,lat,lon[,speed]`` CSV; a non-numeric first row is a header."""
    samples: list[TrajectorySample] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                t, lat, lon = (float(row[k]) for k in range(3))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise ValidationError(f"{path}:{lineno}: malformed trajectory row {row!r}")
            speed = float(row[3]) if len(row) > 3 and row[3].strip() else None
            samples.append(TrajectorySample(t, lat, lon, speed))
    _check_trajectory(samples)
    return samples


def _check_trajectory(samples: Sequence[TrajectorySample]) -> None:
    for a, b in zip(samples, samples[1:]):
        if not (b.t > a.t):
            raise ValidationError(
                f"trajectory timestamps must strictly increase ({a.t} then {b.t})"
            )


def extrapolate(samples: Sequence[TrajectorySample], horizon_s: float,
                step_s: float = 1.0) -> list[TrajectorySample]:
    """Extend a trajectory by dead reckoning from its last two samples."""
    if len(samples) < 2:
        raise ValidationError("extrapolation needs at least 2 samples")
    if horizon_s <= 0.0 or step_s <= 0.0:
        raise ValidationError("horizon and step must be positive")
    a, b = samples[-2], samples[-1]
    dt = b.t - a.t
    vlat = (b.lat - a.lat) / dt
    vlon = (b.lon - a.lon) / dt
    extended = list(samples)
    t = b.t
    while t + step_s <= b.t + horizon_s + 1e-12:
        t += step_s
        extended.append(
            TrajectorySample(t, b.lat + vlat * (t - b.t), b.lon + vlon * (t - b.t), b.speed)
        )
    return extended


# ---------------------------------------------------------------------------
# Coverage prediction


def _coverage_keys(aps: Sequence[AccessPoint], lat: float, lon: float) -> set[str]:
    """Continuity keys of the APs covering a position.

    Grouped APs share their network's key; isolated APs are their own key,
    so moving between two ungrouped APs breaks the interval even if their
    discs happen to touch.
    """
    keys = set()
    for idx, ap in enumerate(aps):
        if haversine_m(lat, lon, ap.lat, ap.lon) <= ap.radius_m:
            keys.add(ap.group if ap.group else f"{ap.essid}#{idx}")
    return keys


def _covering_essids(aps: Sequence[AccessPoint], lat: float, lon: float) -> set[str]:
    return {
        ap.essid
        for ap in aps
        if haversine_m(lat, lon, ap.lat, ap.lon) <= ap.radius_m
    }


def _cross_time(a: TrajectorySample, b: TrajectorySample,
                aps: Sequence[AccessPoint], inside_at_a: bool) -> float:
    """Bisect for the instant the covered-by-``aps`` predicate flips in (a, b)."""

    def inside(t: float) -> bool:
        f = (t - a.t) / (b.t - a.t)
        lat = a.lat + f * (b.lat - a.lat)
        lon = a.lon + f * (b.lon - a.lon)
        return any(
            haversine_m(lat, lon, ap.lat, ap.lon) <= ap.radius_m for ap in aps
        )

    lo, hi = a.t, b.t
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if inside(mid) == inside_at_a:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def predict_coverage(
    trajectory: Sequence[TrajectorySample], aps: Sequence[AccessPoint]
) -> list[CoverageInterval]:
    """Split a trajectory into maximal covered/uncovered intervals.

    The intervals partition [first sample, last sample] with no gaps or
    overlaps. A covered interval persists while at least one network keeps
    covering the walk; a network swap with no overlap in coverage keys
    closes the interval at the handover instant.
    """
    if len(trajectory) < 2:
        raise ValidationError("coverage prediction needs at least 2 samples")
    _check_trajectory(trajectory)

    keys = [_coverage_keys(aps, s.lat, s.lon) for s in trajectory]
    aps_by_key: dict[str, list[AccessPoint]] = {}
    for idx, ap in enumerate(aps):
        aps_by_key.setdefault(ap.group if ap.group else f"{ap.essid}#{idx}", []).append(ap)

    intervals: list[CoverageInterval] = []
    start = trajectory[0].t
    covered = bool(keys[0])
    essids: set[str] = _covering_essids(aps, trajectory[0].lat, trajectory[0].lon)
    groups: set[str] = set(keys[0])

    def close(end: float) -> None:
        intervals.append(
            CoverageInterval(
                start, end, covered,
                tuple(sorted(essids)), tuple(sorted(g for g in groups if "#" not in g)),
            )
        )

    for i in range(len(trajectory) - 1):
        a, b = trajectory[i], trajectory[i + 1]
        now_cov, nxt_cov = bool(keys[i]), bool(keys[i + 1])
        if now_cov != nxt_cov:
            probe = aps if nxt_cov else [
                ap for key in keys[i] for ap in aps_by_key[key]
            ]
            t_cross = _cross_time(a, b, probe, inside_at_a=now_cov)
            close(t_cross)
            start, covered = t_cross, nxt_cov
            essids, groups = set(), set()
        elif now_cov and nxt_cov and not (keys[i] & keys[i + 1]):
            # covered throughout, but no network persists: handover boundary
            old = [ap for key in keys[i] for ap in aps_by_key[key]]
            t_cross = _cross_time(a, b, old, inside_at_a=True)
            close(t_cross)
            start, covered = t_cross, True
            essids, groups = set(), set()
        essids |= _covering_essids(aps, b.lat, b.lon)
        groups |= keys[i + 1]
    close(trajectory[-1].t)
    return [iv for iv in intervals if iv.duration > 0.0]


def classify(
    timeline: Sequence[CoverageInterval],
    threshold_s: float = DEFAULT_LONG_THRESHOLD_S,
) -> list[CoverageEvent]:
    """One event per interval: no coverage, short coverage or long coverage."""
    if not (threshold_s > 0.0):
        raise ValidationError("threshold must be positive")
    events = []
    for interval in timeline:
        if not interval.covered:
            kind, duration = EventKind.EV_NO_WIFI, None
        elif interval.duration >= threshold_s:
            kind, duration = EventKind.EV_LONG_WIFI, interval.duration
        else:
            kind, duration = EventKind.EV_SHORT_WIFI, interval.duration
        events.append(
            CoverageEvent(interval.start, kind, duration, interval.essids)
        )
    return events


def apply_policy(event: CoverageEvent) -> NicActivation:
    """Interface activation for an event; at least one NIC is always on."""
    if event.kind is EventKind.EV_NO_WIFI:
        return NicActivation(active_wifi=False, active_umts=True)
    if event.kind is EventKind.EV_SHORT_WIFI:
        return NicActivation(active_wifi=True, active_umts=True)
    return NicActivation(active_wifi=True, active_umts=False)


def classify_trajectory(
    trajectory: Sequence[TrajectorySample],
    catalog,
    threshold_s: float = DEFAULT_LONG_THRESHOLD_S,
    query_radius_m: float = 500.0,
) -> list[CoverageEvent]:
    """Query the catalog along the walk, then predict and classify.

    When the catalog is unreachable the classifier degrades to a single
    conservative short-coverage event (both interfaces on) spanning the
    whole trajectory; its duration is unknown and left unset.
    """
    if len(trajectory) < 2:
        raise ValidationError("classification needs at least 2 samples")
    try:
        seen: dict[tuple, AccessPoint] = {}
        for sample in trajectory:
            for ap in query_aps(catalog, sample.lat, sample.lon, query_radius_m):
                seen[(ap.essid, ap.lat, ap.lon)] = ap
    except CatalogUnavailable:
        return [
            CoverageEvent(trajectory[0].t, EventKind.EV_SHORT_WIFI, None, ())
        ]
    return classify(predict_coverage(trajectory, list(seen.values())), threshold_s)
