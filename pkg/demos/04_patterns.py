"""Principal components of storm and employment features.

Standardizes the event-table feature matrix, extracts the leading modes,
and contrasts the observations with extreme component weights (below the
10th or above the 90th percentile).
"""

import tempfile

import numpy as np

from stormpanel import ingest
from stormpanel.cli import load_precip
from stormpanel.hazard import attach_precip, mask_overland, match_incidents
from stormpanel.panel import build_event_table
from stormpanel.patterns import extreme_composites, pca_on_table
from stormpanel.synthetic import build_fixture

with tempfile.TemporaryDirectory() as d:
    build_fixture(d)
    tracks = ingest.parse_tracks(f"{d}/tracks.csv")
    mask = ingest.parse_landmask(f"{d}/landmask.csv")
    entities = ingest.parse_entities(f"{d}/entities.csv")
    precip = load_precip(f"{d}/precip.spgr")
    employment = ingest.parse_employment(f"{d}/employment.csv")

incidents = attach_precip(match_incidents(mask_overland(tracks, mask), entities), precip)
table = build_event_table(incidents, employment, None, entities)
model = pca_on_table(table)

print("explained variance ratios:")
for pc, ratio in enumerate(model.explained_variance_ratio[:4], start=1):
    print(f"  PC{pc}: {ratio:.1%}")

print("\nleading loadings per component:")
for pc in range(3):
    order = np.argsort(-np.abs(model.components[:, pc]))[:3]
    terms = ", ".join(
        f"{model.feature_names[j]} {model.components[j, pc]:+.2f}" for j in order
    )
    print(f"  PC{pc + 1}: {terms}")

print("\nextreme-weight composites on PC1:")
low, high = extreme_composites(model, table, pc=0)
for group in (low, high):
    flag = " (small sample)" if group.small_sample else ""
    print(f"  {group.group:4s} n={group.n}{flag}")
    for metric, value in group.metrics.items():
        print(f"       {metric:20s} {value:+.3f}")
