"""Storm-entity exposure: masking, matching, and hazard feature extraction.

The pipeline is: keep only over-land track points, find every entity whose
centroid comes within ``radius_km`` (default 200) of a retained point, and
extract per-incident features (max wind over matched points, translation
speed and calendar position at the closest approach, 3-day precipitation at
the entity centroid).
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError
from .ingest import EntityRegistry, LandMask, PrecipGrid, TrackPoint, TrackSet
from .months import format_month, month_of_date, parse_month, year_month

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG = 110.0  # conservative (true meridian degree is ~111.2 km)
KT_PER_KMH = 1.0 / 1.852
DEFAULT_RADIUS_KM = 200.0


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; accepts scalars or broadcastable arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arctan2(np.sqrt(a), np.sqrt(1.0 - a))
    if d.ndim == 0:
        return float(d)
    return d


def mask_overland(tracks: TrackSet, mask: LandMask) -> TrackSet:
    """Keep track points whose nearest mask cell is land.

    Points outside the mask extent count as water.  Storms left with no
    points are removed.  Drop counts accumulate on the returned set.
    """
    storms: dict[str, list[TrackPoint]] = {}
    removed = 0
    for storm_id, points in tracks.storms.items():
        kept = [p for p in points if mask.is_land(p.lat, p.lon)]
        removed += len(points) - len(kept)
        if kept:
            storms[storm_id] = kept
    return TrackSet(
        storms,
        n_input_rows=tracks.n_input_rows,
        n_dropped_rows=tracks.n_dropped_rows + removed,
    )


def translation_speed(points: list[TrackPoint]) -> np.ndarray:
    """Per-point ground speed of the storm center, in knots.

    Interior points use the central difference (distance between the two
    neighbors over their elapsed time); the ends are one-sided.  Zero
    elapsed time or a single-point track yields NaN.
    """
    n = len(points)
    speeds = np.full(n, np.nan)
    if n < 2:
        return speeds
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    hours = np.array([(p.timestamp - points[0].timestamp).total_seconds() / 3600.0 for p in points])
    for i in range(n):
        a, b = (i, i + 1) if i == 0 else (i - 1, i) if i == n - 1 else (i - 1, i + 1)
        dt = hours[b] - hours[a]
        if dt <= 0:
            continue
        dist = haversine_km(lats[a], lons[a], lats[b], lons[b])
        speeds[i] = dist / dt * KT_PER_KMH
    return speeds


@dataclass(frozen=True)
class Incident:
    """One storm x entity exposure with extracted hazard features."""

    storm_id: str
    entity_id: str
    impact_month: int  # flat month index of closest approach
    impact_doy: int
    max_wind: float | None  # kt, max over matched over-land points
    precip3d: float | None  # mm, filled by attach_precip
    precip_partial: bool
    trans_speed: float | None  # kt at closest approach
    min_distance: float  # km
    entity_lat: float
    entity_lon: float

    @property
    def impact_date(self) -> _dt.date:
        year, _ = year_month(self.impact_month)
        return _dt.date(year, 1, 1) + _dt.timedelta(days=self.impact_doy - 1)


class _EntityGridIndex:
    """Lat/lon bucket index over entity centroids.

    Queries return every entity whose centroid can possibly lie within the
    radius: the latitude shell uses a conservative km-per-degree constant
    and the longitude shell is widened by 1/cos(lat), clamped at |lat| 80.
    The exact haversine test always runs afterwards, so the index can only
    over-approximate.
    """

    def __init__(self, lats: np.ndarray, lons: np.ndarray, cell_deg: float = 2.0):
        self.cell_deg = cell_deg
        self.n_lon_cells = int(math.ceil(360.0 / cell_deg))
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for idx, (lat, lon) in enumerate(zip(lats, lons)):
            self.buckets.setdefault(self._key(lat, lon), []).append(idx)

    def _key(self, lat: float, lon: float) -> tuple[int, int]:
        i = int(math.floor(lat / self.cell_deg))
        j = int(math.floor((lon % 360.0) / self.cell_deg)) % self.n_lon_cells
        return i, j

    def query(self, lat: float, lon: float, radius_km: float) -> list[int]:
        dlat = radius_km / KM_PER_DEG
        band = min(abs(lat) + dlat, 80.0)
        dlon = radius_km / (KM_PER_DEG * math.cos(math.radians(band)))
        i_lo = int(math.floor((lat - dlat) / self.cell_deg))
        i_hi = int(math.floor((lat + dlat) / self.cell_deg))
        j_lo = int(math.floor((lon - dlon) % 360.0 / self.cell_deg))
        n_j = int(math.ceil(2.0 * dlon / self.cell_deg)) + 1
        out: list[int] = []
        for i in range(i_lo, i_hi + 1):
            for j_off in range(min(n_j, self.n_lon_cells)):
                j = (j_lo + j_off) % self.n_lon_cells
                out.extend(self.buckets.get((i, j), ()))
        return out


def match_incidents(
    tracks: TrackSet,
    entities: EntityRegistry,
    radius_km: float = DEFAULT_RADIUS_KM,
) -> list[Incident]:
    """Match over-land track points to entity centroids within ``radius_km``.

    For every (storm, entity) pair whose minimum point-to-centroid distance
    is within the radius, one Incident is emitted: ``max_wind`` is the
    maximum over all matched points, the impact month/day and translation
    speed come from the closest-approach point (earliest on ties), and
    ``min_distance`` is the minimum distance itself.  The result is sorted
    by (storm_id, entity_id) and is independent of iteration order.
    """
    entity_ids = entities.sorted_ids()
    if not entity_ids or not tracks.storms:
        return []
    ent_lat = np.array([entities.entities[e].centroid_lat for e in entity_ids])
    ent_lon = np.array([entities.entities[e].centroid_lon for e in entity_ids])
    index = _EntityGridIndex(ent_lat, ent_lon)
    incidents: list[Incident] = []
    for storm_id in tracks.storm_ids:
        points = tracks.storms[storm_id]
        speeds = translation_speed(points)
        cand: set[int] = set()
        for p in points:
            cand.update(index.query(p.lat, p.lon, radius_km))
        if not cand:
            continue
        cand_idx = np.array(sorted(cand))
        pt_lat = np.array([p.lat for p in points])
        pt_lon = np.array([p.lon for p in points])
        # (n_points, n_candidates) distance matrix
        dists = haversine_km(
            pt_lat[:, None], pt_lon[:, None], ent_lat[cand_idx][None, :], ent_lon[cand_idx][None, :]
        )
        winds = np.array([np.nan if p.max_wind is None else p.max_wind for p in points])
        for col, ent_pos in enumerate(cand_idx):
            d = dists[:, col]
            closest = int(np.argmin(d))  # first occurrence = earliest timestamp
            if d[closest] > radius_km:
                continue
            matched = d <= radius_km
            wind_vals = winds[matched]
            max_wind = None if np.all(np.isnan(wind_vals)) else float(np.nanmax(wind_vals))
            ts = points[closest].timestamp
            speed = speeds[closest]
            incidents.append(
                Incident(
                    storm_id=storm_id,
                    entity_id=entity_ids[ent_pos],
                    impact_month=month_of_date(ts.date()),
                    impact_doy=ts.timetuple().tm_yday,
                    max_wind=max_wind,
                    precip3d=None,
                    precip_partial=False,
                    trans_speed=None if np.isnan(speed) else float(speed),
                    min_distance=float(d[closest]),
                    entity_lat=float(ent_lat[ent_pos]),
                    entity_lon=float(ent_lon[ent_pos]),
                )
            )
    incidents.sort(key=lambda inc: (inc.storm_id, inc.entity_id))
    return incidents


def attach_precip(
    incidents: list[Incident],
    grid: PrecipGrid,
    window_days: int = 3,
) -> list[Incident]:
    """Fill ``precip3d`` with the windowed total at the entity centroid.

    The window is centered on the closest-approach date (for the default 3
    days: d-1, d, d+1).  Missing days contribute 0 and set the partial-data
    flag; a centroid outside the grid extent leaves precip3d missing.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    before = (window_days - 1) // 2
    out: list[Incident] = []
    for inc in incidents:
        cell = grid.geometry.nearest_cell(inc.entity_lat, inc.entity_lon)
        if cell is None:
            out.append(replace(inc, precip3d=None, precip_partial=False))
            continue
        total = 0.0
        seen_any = False
        partial = False
        start = inc.impact_date - _dt.timedelta(days=before)
        for k in range(window_days):
            day = grid.day_index(start + _dt.timedelta(days=k))
            value = np.nan if day is None else grid.values[day, cell[0], cell[1]]
            if np.isnan(value):
                partial = True
            else:
                seen_any = True
                total += float(value)
        if not seen_any:
            out.append(replace(inc, precip3d=None, precip_partial=True))
        else:
            out.append(replace(inc, precip3d=total, precip_partial=partial))
    return out


# ---------------------------------------------------------------------------
# Incident file I/O

_INCIDENT_COLUMNS = (
    "storm_id", "entity_id", "impact_month", "impact_doy", "max_wind",
    "precip3d", "precip_partial", "trans_speed", "min_distance",
    "entity_lat", "entity_lon",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_incidents(incidents: list[Incident], path) -> None:
    """Write the incident table, sorted by (storm_id, entity_id)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_INCIDENT_COLUMNS)
        for inc in sorted(incidents, key=lambda i: (i.storm_id, i.entity_id)):
            writer.writerow(
                [
                    inc.storm_id,
                    inc.entity_id,
                    format_month(inc.impact_month),
                    inc.impact_doy,
                    _fmt(inc.max_wind),
                    _fmt(inc.precip3d),
                    _fmt(inc.precip_partial),
                    _fmt(inc.trans_speed),
                    _fmt(inc.min_distance),
                    _fmt(inc.entity_lat),
                    _fmt(inc.entity_lon),
                ]
            )


def read_incidents(path) -> list[Incident]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in _INCIDENT_COLUMNS):
            raise FormatError(f"{path}: malformed incident file header")
        out = []
        for row in reader:
            out.append(
                Incident(
                    storm_id=row["storm_id"],
                    entity_id=row["entity_id"],
                    impact_month=parse_month(row["impact_month"]),
                    impact_doy=int(row["impact_doy"]),
                    max_wind=_opt_float(row["max_wind"]),
                    precip3d=_opt_float(row["precip3d"]),
                    precip_partial=row["precip_partial"] == "1",
                    trans_speed=_opt_float(row["trans_speed"]),
                    min_distance=float(row["min_distance"]),
                    entity_lat=float(row["entity_lat"]),
                    entity_lon=float(row["entity_lon"]),
                )
            )
    return out


def _opt_float(text: str) -> float | None:
    return None if text == "" else float(text)
