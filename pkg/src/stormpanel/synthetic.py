"""Deterministic synthetic dataset: 5 storms, 40 entities, 36 months.

The generated files exercise the full pipeline (including the packed
precipitation binary) in a few seconds with no external data.  Storm
impacts are injected into the employment series with sector-specific
responses, so the downstream estimators have real signal to find.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
import os

import numpy as np

from .hazard import haversine_km
from .ingest import SECTOR_CODES, GridGeometry, PrecipGrid, write_precip_binary
from .months import month_index

COAST_LAT = 27.5  # land is everything at or north of this latitude

#: share of total private employment by sector (supersectors sum to 1)
_SECTOR_SHARES = {
    "natural_resources": 0.02,
    "construction": 0.08,
    "manufacturing": 0.15,
    "trade_transport_utilities": 0.20,
    "information": 0.02,
    "financial": 0.05,
    "professional_business": 0.12,
    "education_health": 0.15,
    "leisure_hospitality": 0.13,
    "other_services": 0.08,
}
_GOODS = ("natural_resources", "construction", "manufacturing")

_STORMS = [
    # (storm_id, start date, start lon, peak kt, forward kt, westward drift deg/step)
    ("SYN012004", _dt.date(2004, 8, 5), -88.5, 65.0, 12.0, 0.02),
    ("SYN022004", _dt.date(2004, 8, 20), -84.0, 110.0, 10.0, 0.03),
    ("SYN032004", _dt.date(2004, 9, 4), -91.0, 45.0, 6.0, 0.01),
    ("SYN042004", _dt.date(2004, 9, 18), -81.5, 90.0, 18.0, 0.04),
    ("SYN052004", _dt.date(2004, 10, 2), -88.0, 55.0, 10.0, 0.05),
]

_MONTH_START = month_index(2003, 1)
_MONTH_END = month_index(2005, 12)


def _storm_tracks() -> dict[str, list[tuple[_dt.datetime, float, float, float, float]]]:
    """Per storm: (timestamp, lat, lon, wind kt, pressure hPa), 3-hourly."""
    tracks = {}
    for storm_id, start, lon0, peak, forward_kt, drift in _STORMS:
        deg_per_step = forward_kt * 1.852 * 3.0 / 111.2
        points = []
        lat, lon = 24.0, lon0
        ts = _dt.datetime(start.year, start.month, start.day)
        landfall_step = None
        for step in range(56):
            if storm_id == "SYN052004":
                # hugs the coast offshore, briefly crossing onto land
                lat = 26.8 + (1.6 if 24 <= step <= 30 else 0.0)
                lon = lon0 + 0.25 * step
            else:
                lat += deg_per_step
                lon -= drift * 2.5  # gentle constant westward drift
            if landfall_step is None and lat >= COAST_LAT:
                landfall_step = step
            if landfall_step is None:
                wind = 30.0 + (peak - 30.0) * min(1.0, step / 12.0)
            else:
                wind = peak * math.exp(-0.05 * (step - landfall_step))
            wind = max(wind, 15.0)
            pressure = 1010.0 - 2.2 * wind + 60.0
            points.append((ts, lat, lon, round(wind, 1), round(pressure, 1)))
            ts += _dt.timedelta(hours=3)
            if lat > 38.5:
                break
        tracks[storm_id] = points
    return tracks


def _entities(rng) -> list[dict]:
    out = []
    for i in range(40):
        lat = float(rng.uniform(27.6, 35.0))
        lon = float(rng.uniform(-92.5, -79.5))
        coastal = lat < 31.0
        state = "CS" if coastal else "NS"
        out.append(
            {
                "entity_id": f"{90001 + i:05d}",
                "name": f"Synth County {i + 1:02d}",
                "state": state,
                "lat": round(lat, 4),
                "lon": round(lon, 4),
                "coastal": coastal,
                # socioeconomic profile shared by employment and covariates
                "income": float(rng.uniform(28000, 58000)),
                "pop": float(rng.uniform(8000, 220000)),
                "edu": float(rng.uniform(74, 93)),
                "income_g": float(rng.uniform(0.01, 0.05)),
                "pop_g": float(rng.uniform(0.0, 0.025)),
                "edu_g": float(rng.uniform(0.1, 1.2)),
            }
        )
    return out


def _storm_hits(tracks, entities) -> dict[str, list[tuple[int, float, float]]]:
    """entity_id -> [(impact month, wind hazard 0..1, precip hazard 0..1)]."""
    hits: dict[str, list[tuple[int, float, float]]] = {}
    for storm_id, points in tracks.items():
        overland = [(ts, lat, lon, wind) for ts, lat, lon, wind, _ in points if lat >= COAST_LAT]
        if not overland:
            continue
        wet = {"SYN032004": 1.0, "SYN022004": 0.55}.get(storm_id, 0.35)
        for ent in entities:
            dists = [haversine_km(lat, lon, ent["lat"], ent["lon"]) for _, lat, lon, _ in overland]
            dmin = min(dists)
            if dmin > 200.0:
                continue
            closest = dists.index(dmin)
            ts = overland[closest][0]
            wind_max = max(w for _, _, _, w in overland if True)
            wind_h = min(max((wind_max - 40.0) / 70.0, 0.0), 1.0) * (1.0 - dmin / 400.0)
            precip_h = wet * (1.0 - dmin / 300.0)
            hits.setdefault(ent["entity_id"], []).append(
                (month_index(ts.year, ts.month), wind_h, max(precip_h, 0.0))
            )
    return hits


def _employment_series(rng, entities, hits) -> dict[tuple[str, str, str, int], int]:
    data = {}
    months = list(range(_MONTH_START, _MONTH_END + 1))
    for i, ent in enumerate(entities):
        # employment scales with the working-age population, with scatter
        base_total = ent["pop"] * 0.35 * float(rng.lognormal(0.0, 0.25))
        if i in (5, 17):
            base_total = 330.0  # below the 100-employee basis filter
        phase = float(rng.uniform(-0.8, 0.8))  # near-common cycle, learnable from timing
        ent_hits = hits.get(ent["entity_id"], [])
        for sector, share in _SECTOR_SHARES.items():
            level = base_total * share
            for t, m in enumerate(months):
                seasonal_amp = 0.08 if sector == "leisure_hospitality" else 0.03
                value = level
                value *= 1.0 + seasonal_amp * math.sin(2.0 * math.pi * (m + phase) / 12.0)
                value *= (1.0 + 0.002) ** t
                for m0, wind_h, precip_h in ent_hits:
                    k = m - m0
                    if not 0 <= k <= 12:
                        continue
                    h = min(wind_h + 0.5 * precip_h, 1.5)
                    if sector == "leisure_hospitality":
                        value *= 1.0 - 0.22 * h * max(0.0, 1.0 - k / 6.0)
                    elif sector == "construction":
                        ramp = min(k / 2.0, 1.0) * max(0.0, 1.0 - k / 10.0)
                        value *= 1.0 + 0.25 * h * ramp
                    elif sector in _GOODS:
                        value *= 1.0 - 0.05 * h * max(0.0, 1.0 - k / 4.0)
                    else:
                        value *= 1.0 - 0.10 * h * max(0.0, 1.0 - k / 5.0)
                value *= 1.0 + float(rng.normal(0.0, 0.006))
                data[(ent["entity_id"], "private", sector, m)] = max(int(round(value)), 5)
    # aggregates are sums of their parts; totals add a public-sector layer
    for ent in entities:
        e = ent["entity_id"]
        for m in months:
            goods = sum(data[(e, "private", s, m)] for s in _GOODS)
            service = sum(
                data[(e, "private", s, m)] for s in _SECTOR_SHARES if s not in _GOODS
            )
            data[(e, "private", "goods", m)] = goods
            data[(e, "private", "service", m)] = service
            data[(e, "private", "total", m)] = goods + service
            data[(e, "total", "total", m)] = int(round((goods + service) * 1.18))
    return data


def _write_tracks(tracks, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["storm_id", "iso_time", "lat", "lon", "wind_kt", "pres_hpa"])
        for storm_id in sorted(tracks):
            for ts, lat, lon, wind, pres in tracks[storm_id]:
                writer.writerow(
                    [storm_id, ts.strftime("%Y-%m-%d %H:%M:%S"),
                     f"{lat:.3f}", f"{lon:.3f}", f"{wind:.1f}", f"{pres:.1f}"]
                )


def _write_entities(entities, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["entity_id", "name", "state", "centroid_lat", "centroid_lon", "coastal_state"])
        for ent in entities:
            writer.writerow(
                [ent["entity_id"], ent["name"], ent["state"],
                 f"{ent['lat']:.4f}", f"{ent['lon']:.4f}", int(ent["coastal"])]
            )


def _write_employment(data, path):
    quarters = {}
    for (e, own, sector, m), value in data.items():
        year, month = m // 12, m % 12 + 1
        key = (e, own, sector, year, (month - 1) // 3 + 1)
        quarters.setdefault(key, ["", "", ""])[(month - 1) % 3] = str(value)
    own_code = {"total": "0", "private": "5"}
    sector_code = {v: k for k, v in SECTOR_CODES.items()}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["area_fips", "own_code", "industry_code", "year", "qtr",
                         "month1_emplvl", "month2_emplvl", "month3_emplvl"])
        for key in sorted(quarters):
            e, own, sector, year, qtr = key
            writer.writerow([e, own_code[own], sector_code[sector], year, qtr, *quarters[key]])


def _write_covariates(rng, entities, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["entity_id", "year", "income_per_capita", "workage_pop", "education"])
        for i, ent in enumerate(entities):
            if i >= 38:
                continue  # two entities without covariates (exclusion path)
            # entity-specific growth so covariates survive two-way demeaning
            for j, year in enumerate((2003, 2004, 2005)):
                writer.writerow(
                    [ent["entity_id"], year,
                     f"{ent['income'] * (1.0 + ent['income_g'] * j):.0f}",
                     f"{ent['pop'] * (1.0 + ent['pop_g'] * j):.0f}",
                     f"{min(ent['edu'] + ent['edu_g'] * j, 100.0):.1f}"]
                )


def _write_landmask(path):
    lats = np.arange(23.0, 39.01, 0.25)
    lons = np.arange(-99.0, -74.99, 0.25)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lat", "lon", "land"])
        for lat in lats:
            for lon in lons:
                writer.writerow([f"{lat:.2f}", f"{lon:.2f}", int(lat >= COAST_LAT)])


def _write_precip(rng, tracks, path):
    geom = GridGeometry(lat0=23.0, lon0=-99.0, dlat=0.5, dlon=0.5, nlat=33, nlon=49)
    start = _dt.date(2004, 7, 25)
    ndays = 104
    lat_c = geom.lat_centers()[:, None]
    lon_c = geom.lon_centers()[None, :]
    values = rng.gamma(0.6, 2.5, size=(ndays, geom.nlat, geom.nlon)).astype(np.float32)
    rain_rate = {"SYN032004": 140.0, "SYN022004": 110.0}
    for storm_id, points in tracks.items():
        heavy = rain_rate.get(storm_id, 30.0)
        by_day: dict[_dt.date, list[tuple[float, float]]] = {}
        for ts, lat, lon, _, _ in points:
            by_day.setdefault(ts.date(), []).append((lat, lon))
        for day, positions in by_day.items():
            k = (day - start).days
            if not 0 <= k < ndays:
                continue
            clat = sum(p[0] for p in positions) / len(positions)
            clon = sum(p[1] for p in positions) / len(positions)
            dist2 = (lat_c - clat) ** 2 + (lon_c - clon) ** 2
            values[k] += (heavy * np.exp(-dist2 / (2.0 * 2.0**2))).astype(np.float32)
    holes = rng.random(values.shape) < 0.004
    values[holes] = np.nan
    write_precip_binary(PrecipGrid(geom, start, values), path)


_CONFIG_TEMPLATE = """\
# synthetic end-to-end fixture configuration
tracks = tracks.csv
precip = precip.spgr
employment = employment.csv
entities = entities.csv
covariates = covariates.csv
landmask = landmask.csv
output_dir = out

seed = 42
sectors = total,goods,service,construction,leisure_hospitality
min_group = 20
n_trees = 120
min_samples_leaf = 2
bootstrap_resamples = 400
"""


def build_fixture(outdir, seed: int = 20040805) -> None:
    """Write the complete fixture dataset and config into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(seed)
    tracks = _storm_tracks()
    entities = _entities(rng)
    hits = _storm_hits(tracks, entities)
    employment = _employment_series(rng, entities, hits)
    _write_tracks(tracks, os.path.join(outdir, "tracks.csv"))
    _write_entities(entities, os.path.join(outdir, "entities.csv"))
    _write_employment(employment, os.path.join(outdir, "employment.csv"))
    _write_covariates(rng, entities, os.path.join(outdir, "covariates.csv"))
    _write_landmask(os.path.join(outdir, "landmask.csv"))
    _write_precip(rng, tracks, os.path.join(outdir, "precip.spgr"))
    with open(os.path.join(outdir, "config.txt"), "w", encoding="utf-8", newline="") as fh:
        fh.write(_CONFIG_TEMPLATE)


if __name__ == "__main__":  # pragma: no cover
    import sys

    build_fixture(sys.argv[1] if len(sys.argv) > 1 else "fixture")
