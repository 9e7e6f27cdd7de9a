"""Regenerate tests/golden/incidents_golden.csv from the fixture.

Matching here is the unindexed all-pairs path: every storm is compared
against every entity with the production distance function and the same
tie-break rules, so the bucketed index in match_incidents is pinned
byte-for-byte.  Run from the repository root:

    python3 tests/make_golden.py
"""

import os
import sys
import tempfile

import numpy as np

from stormpanel import hazard, ingest
from stormpanel.cli import load_precip
from stormpanel.months import month_of_date
from stormpanel.synthetic import build_fixture


def bruteforce_match(tracks, entities, radius_km):
    incidents = []
    ids = entities.sorted_ids()
    for storm_id in sorted(tracks.storms):
        points = tracks.storms[storm_id]
        speeds = hazard.translation_speed(points)
        for eid in ids:
            ent = entities.entities[eid]
            dists = np.array(
                [hazard.haversine_km(p.lat, p.lon, ent.centroid_lat, ent.centroid_lon) for p in points]
            )
            closest = int(np.argmin(dists))
            if dists[closest] > radius_km:
                continue
            winds = [
                p.max_wind for p, d in zip(points, dists) if d <= radius_km and p.max_wind is not None
            ]
            ts = points[closest].timestamp
            incidents.append(
                hazard.Incident(
                    storm_id=storm_id,
                    entity_id=eid,
                    impact_month=month_of_date(ts.date()),
                    impact_doy=ts.timetuple().tm_yday,
                    max_wind=max(winds) if winds else None,
                    precip3d=None,
                    precip_partial=False,
                    trans_speed=None if np.isnan(speeds[closest]) else float(speeds[closest]),
                    min_distance=float(dists[closest]),
                    entity_lat=ent.centroid_lat,
                    entity_lon=ent.centroid_lon,
                )
            )
    return incidents


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    out = os.path.join(here, "golden", "incidents_golden.csv")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    with tempfile.TemporaryDirectory() as d:
        build_fixture(d)
        tracks = ingest.parse_tracks(os.path.join(d, "tracks.csv"))
        mask = ingest.parse_landmask(os.path.join(d, "landmask.csv"))
        entities = ingest.parse_entities(os.path.join(d, "entities.csv"))
        grid = load_precip(os.path.join(d, "precip.spgr"))
    overland = hazard.mask_overland(tracks, mask)
    incidents = bruteforce_match(overland, entities, 200.0)
    incidents = hazard.attach_precip(incidents, grid, 3)
    hazard.write_incidents(incidents, out)
    print(f"wrote {out} ({len(incidents)} incidents)")


if __name__ == "__main__":
    sys.exit(main())
