"""Link storm tracks to county-level entities and extract hazard features.

Walks the first pipeline stage on the bundled synthetic dataset: parse the
inputs, keep only over-land track points, match storms to entities within
200 km, and attach 3-day precipitation totals at each entity centroid.
"""

import tempfile

from stormpanel import ingest
from stormpanel.cli import load_precip
from stormpanel.hazard import attach_precip, mask_overland, match_incidents
from stormpanel.months import format_month
from stormpanel.synthetic import build_fixture

with tempfile.TemporaryDirectory() as data_dir:
    build_fixture(data_dir)
    tracks = ingest.parse_tracks(f"{data_dir}/tracks.csv")
    mask = ingest.parse_landmask(f"{data_dir}/landmask.csv")
    entities = ingest.parse_entities(f"{data_dir}/entities.csv")
    precip = load_precip(f"{data_dir}/precip.spgr")

print(f"parsed {len(tracks.storms)} storms, {tracks.n_points} track points "
      f"({tracks.n_dropped_rows} rows dropped)")

overland = mask_overland(tracks, mask)
for storm_id in overland.storm_ids:
    kept = len(overland.storms[storm_id])
    total = len(tracks.storms[storm_id])
    print(f"  {storm_id}: {kept}/{total} points over land")

incidents = match_incidents(overland, entities, radius_km=200.0)
incidents = attach_precip(incidents, precip, window_days=3)
print(f"\n{len(incidents)} storm-entity incidents within 200 km")

print("\nstrongest incidents by wind:")
for inc in sorted(incidents, key=lambda i: -(i.max_wind or 0))[:5]:
    print(f"  {inc.storm_id} -> {inc.entity_id}  month {format_month(inc.impact_month)}  "
          f"wind {inc.max_wind:.0f} kt  precip3d {inc.precip3d:.0f} mm  "
          f"distance {inc.min_distance:.0f} km")

print("\nwettest incidents:")
for inc in sorted(incidents, key=lambda i: -(i.precip3d or 0))[:5]:
    print(f"  {inc.storm_id} -> {inc.entity_id}  precip3d {inc.precip3d:.0f} mm  "
          f"wind {inc.max_wind:.0f} kt")
