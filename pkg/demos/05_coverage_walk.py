"""Walk two synthetic streets and let the coverage oracle pick interfaces.

Street one is a campus corridor: four access points of the same network
with overlapping discs, so link-layer roaming keeps one long coverage
interval alive and UMTS can be switched off. Street two has WiFi only at
its two ends; in the uncovered middle UMTS is the only option.
"""

import math

from abps_toolkit import coverage
from abps_toolkit.coverage import (
    AccessPoint,
    LocalCatalog,
    TrajectorySample,
    apply_policy,
    classify,
    extrapolate,
    predict_coverage,
    query_aps,
)

M = 180.0 / (math.pi * coverage.EARTH_RADIUS_M)  # one meter, in degrees


def eastward_walk(length_m, speed_mps=1.0):
    steps = int(length_m / speed_mps)
    return [TrajectorySample(t, 0.0, t * speed_mps * M, speed_mps) for t in range(steps + 1)]


def show(title, trajectory, aps, threshold=40.0):
    print(f"== {title}")
    for event in classify(predict_coverage(trajectory, aps), threshold):
        active = apply_policy(event)
        duration = "" if event.duration is None else f" for {event.duration:.0f} s"
        names = f"  [{', '.join(event.essids)}]" if event.essids else ""
        print(f"   t={event.timestamp:6.1f}s  {event.kind.value:14}{duration:12} "
              f"-> wifi={'on ' if active.active_wifi else 'off'} "
              f"umts={'on' if active.active_umts else 'off'}{names}")
    print()


corridor = [
    AccessPoint(f"campus-{i}", 0.0, x * M, radius_m=60.0, group="campusnet")
    for i, x in enumerate((40, 120, 200, 280), start=1)
] + [AccessPoint("cafe-hotspot", 0.0, 150 * M, radius_m=30.0)]

show("campus corridor, 360 m", eastward_walk(360), corridor)

endpoints = [
    AccessPoint("park-wifi", 0.0, 30 * M, radius_m=50.0),
    AccessPoint("corner-shop", 0.0, 470 * M, radius_m=50.0),
]
show("park to corner shop, 500 m", eastward_walk(500), endpoints)

# The catalog is normally queried around the current position; distance
# filtering and caching live behind query_aps.
catalog = LocalCatalog(corridor)
nearby = query_aps(catalog, 0.0, 150 * M, radius=80.0)
print("access points within 80 m of the corridor midpoint:",
      ", ".join(ap.essid for ap in nearby))

# Dead reckoning extends a walk beyond its last fix, which is how the
# classifier can look a bit into the future.
walk = eastward_walk(60)
extended = extrapolate(walk, horizon_s=30.0, step_s=5.0)
print(f"extrapolated {len(extended) - len(walk)} samples beyond t={walk[-1].t:.0f}s, "
      f"ending {extended[-1].lon / M:.0f} m down the street")
