"""Parsers for all input files.

Every input is comma-separated text with a header row (RFC-4180 quoting,
ASCII/UTF-8 only), except the packed precipitation binary described next to
:func:`read_precip_binary`.  Documented columns:

* storm tracks      -- ``storm_id, iso_time, lat, lon, wind_kt, pres_hpa``
* precipitation     -- ``date, lat, lon, precip_mm`` (long format, daily)
* employment        -- ``area_fips, own_code, industry_code, year, qtr,
  month1_emplvl, month2_emplvl, month3_emplvl`` (QCEW-style quarterly rows)
* entities          -- ``entity_id, name, state, centroid_lat, centroid_lon,
  coastal_state``
* covariates        -- ``entity_id, year, income_per_capita, workage_pop,
  education`` (annual anchors)
* land mask         -- ``lat, lon, land`` (regular grid, 1 = land)

Parsers are total over these grammars: structurally broken files raise
:class:`~stormpanel.errors.FormatError`, individually bad rows or cells are
dropped and counted, and the returned containers always satisfy their
invariants.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, FormatError
from .months import month_index, parse_date, parse_timestamp

EMPLOYMENT_MONTH_MIN = month_index(1990, 1)
EMPLOYMENT_MONTH_MAX = month_index(2021, 12)

OWNERSHIP_CODES = {"0": "total", "1": "federal", "2": "state", "3": "local", "5": "private"}

#: Industry aggregates in report order: total, the two high-level groups,
#: then the eleven supersectors.  Keys are QCEW industry codes.
SECTOR_CODES = {
    "10": "total",
    "101": "goods",
    "102": "service",
    "1011": "natural_resources",
    "1012": "construction",
    "1013": "manufacturing",
    "1021": "trade_transport_utilities",
    "1022": "information",
    "1023": "financial",
    "1024": "professional_business",
    "1025": "education_health",
    "1026": "leisure_hospitality",
    "1027": "other_services",
}
SECTORS = tuple(SECTOR_CODES.values())

_ENTITY_LAT_BOUNDS = (-15.0, 72.0)  # includes American Samoa through Alaska


def _read_rows(path, required):
    """Yield (header_ok, DictReader rows) after validating the header."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise FormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        try:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: not ASCII/UTF-8 text") from exc
        if header is None:
            raise EmptyInputError(f"{path}: file is empty")
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"{path}: malformed header, missing columns {missing}")
        try:
            rows = list(reader)
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: not ASCII/UTF-8 text") from exc
    return rows


def _float_or_none(text):
    if text is None:
        return None
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


# ---------------------------------------------------------------------------
# Storm tracks


@dataclass(frozen=True, slots=True)
class TrackPoint:
    storm_id: str
    timestamp: _dt.datetime
    lat: float
    lon: float
    max_wind: float | None  # knots
    min_pressure: float | None  # hPa


@dataclass
class TrackSet:
    """Per-storm time series, timestamps strictly increasing within a storm."""

    storms: dict[str, list[TrackPoint]]
    n_input_rows: int = 0
    n_dropped_rows: int = 0

    @property
    def storm_ids(self) -> list[str]:
        return sorted(self.storms)

    @property
    def n_points(self) -> int:
        return sum(len(points) for points in self.storms.values())


def parse_tracks(path) -> TrackSet:
    """Parse a best-track export into a :class:`TrackSet`.

    Rows with an unparseable or out-of-bounds position (or timestamp) are
    dropped and counted; missing wind or pressure is retained as ``None``.
    Within a storm, rows are time-sorted and duplicate timestamps dropped.
    """
    rows = _read_rows(path, ("storm_id", "iso_time", "lat", "lon", "wind_kt", "pres_hpa"))
    storms: dict[str, list[TrackPoint]] = {}
    dropped = 0
    for row in rows:
        storm_id = (row.get("storm_id") or "").strip()
        lat = _float_or_none(row.get("lat"))
        lon = _float_or_none(row.get("lon"))
        if lon is not None and 180.0 <= lon < 360.0:
            lon -= 360.0
        try:
            ts = parse_timestamp(row.get("iso_time") or "")
        except FormatError:
            ts = None
        if (
            not storm_id
            or ts is None
            or lat is None
            or lon is None
            or not -90.0 <= lat <= 90.0
            or not -180.0 <= lon < 180.0
        ):
            dropped += 1
            continue
        wind = _float_or_none(row.get("wind_kt"))
        if wind is not None and wind < 0:
            wind = None
        pres = _float_or_none(row.get("pres_hpa"))
        if pres is not None and not 800.0 < pres < 1100.0:
            pres = None
        storms.setdefault(storm_id, []).append(
            TrackPoint(storm_id, ts, lat, lon, wind, pres)
        )
    for storm_id, points in storms.items():
        points.sort(key=lambda p: p.timestamp)
        deduped: list[TrackPoint] = []
        for p in points:
            if deduped and p.timestamp == deduped[-1].timestamp:
                dropped += 1
                continue
            deduped.append(p)
        storms[storm_id] = deduped
    storms = {sid: pts for sid, pts in storms.items() if pts}
    return TrackSet(storms, n_input_rows=len(rows), n_dropped_rows=dropped)


# ---------------------------------------------------------------------------
# Regular lat/lon grids (precipitation, land mask)


@dataclass(frozen=True)
class GridGeometry:
    """Regular grid of cell centers at ``lat0 + i*dlat``, ``lon0 + j*dlon``."""

    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int

    def nearest_cell(self, lat: float, lon: float) -> tuple[int, int] | None:
        """Index of the nearest cell center, or None outside the extent."""
        i = int(math.floor((lat - self.lat0) / self.dlat + 0.5))
        j = int(math.floor((lon - self.lon0) / self.dlon + 0.5))
        if 0 <= i < self.nlat and 0 <= j < self.nlon:
            return i, j
        return None

    def lat_centers(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.nlat)

    def lon_centers(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.nlon)


@dataclass
class PrecipGrid:
    """Dense daily precipitation, mm/day; missing cells are NaN (float32)."""

    geometry: GridGeometry
    start_date: _dt.date
    values: np.ndarray  # (ndays, nlat, nlon) float32

    @property
    def ndays(self) -> int:
        return self.values.shape[0]

    @property
    def dates(self) -> list[_dt.date]:
        return [self.start_date + _dt.timedelta(days=k) for k in range(self.ndays)]

    def day_index(self, d: _dt.date) -> int | None:
        k = (d - self.start_date).days
        return k if 0 <= k < self.ndays else None


@dataclass
class LandMask:
    """Boolean raster; cells absent from the source file count as water."""

    geometry: GridGeometry
    land: np.ndarray  # (nlat, nlon) bool

    def is_land(self, lat: float, lon: float) -> bool:
        cell = self.geometry.nearest_cell(lat, lon)
        if cell is None:
            return False
        return bool(self.land[cell])


def _infer_axis(values: np.ndarray, what: str, path) -> tuple[float, float, int]:
    """Infer (origin, spacing, count) of a regular axis from coordinates."""
    uniq = np.unique(values)
    if uniq.size < 2:
        raise FormatError(f"{path}: cannot infer {what} spacing from a single coordinate")
    diffs = np.diff(uniq)
    spacing = float(diffs.min())
    if spacing <= 0:
        raise FormatError(f"{path}: inconsistent {what} spacing")
    steps = (uniq - uniq[0]) / spacing
    if not np.allclose(steps, np.round(steps), atol=1e-6):
        raise FormatError(f"{path}: inconsistent {what} spacing inferred from coordinates")
    count = int(round(float(uniq[-1] - uniq[0]) / spacing)) + 1
    return float(uniq[0]), spacing, count


def _grid_cells(rows, path, value_col):
    """Common long-format grid assembly: returns (geometry, cells dict)."""
    parsed = []
    for row in rows:
        lat = _float_or_none(row.get("lat"))
        lon = _float_or_none(row.get("lon"))
        if lat is None or lon is None or not -90 <= lat <= 90 or not -180 <= lon < 360:
            raise FormatError(f"{path}: bad coordinate in row {row!r}")
        if lon >= 180.0:
            lon -= 360.0
        parsed.append((lat, lon, row))
    lats = np.array([p[0] for p in parsed])
    lons = np.array([p[1] for p in parsed])
    lat0, dlat, nlat = _infer_axis(lats, "lat", path)
    lon0, dlon, nlon = _infer_axis(lons, "lon", path)
    geom = GridGeometry(lat0, lon0, dlat, dlon, nlat, nlon)
    cells = []
    for lat, lon, row in parsed:
        i = int(round((lat - lat0) / dlat))
        j = int(round((lon - lon0) / dlon))
        cells.append((i, j, row))
    return geom, cells


def parse_precip(path) -> PrecipGrid:
    """Assemble a dense daily grid from long-format rows.

    The date list is made contiguous from the earliest to the latest date
    seen; absent (date, cell) combinations are NaN.  Duplicate
    (date, lat, lon) rows and negative amounts are format errors.
    """
    rows = _read_rows(path, ("date", "lat", "lon", "precip_mm"))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    geom, cells = _grid_cells(rows, path, "precip_mm")
    dates = [parse_date(row["date"]) for _, _, row in cells]
    start, end = min(dates), max(dates)
    ndays = (end - start).days + 1
    values = np.full((ndays, geom.nlat, geom.nlon), np.nan, dtype=np.float32)
    seen = set()
    for (i, j, row), d in zip(cells, dates):
        key = (d, i, j)
        if key in seen:
            raise FormatError(
                f"{path}: duplicate cell (date={d.isoformat()}, "
                f"lat={row['lat']}, lon={row['lon']})"
            )
        seen.add(key)
        amount = _float_or_none(row.get("precip_mm"))
        if amount is None:
            continue  # explicit missing cell
        if amount < 0:
            raise FormatError(f"{path}: negative precipitation {amount} on {d.isoformat()}")
        values[(d - start).days, i, j] = np.float32(amount)
    return PrecipGrid(geom, start, values)


_SPGR_MAGIC = b"SPGR1"
_EPOCH = _dt.date(1970, 1, 1)


def write_precip_binary(grid: PrecipGrid, path) -> None:
    """Write the packed binary format.

    Layout: magic ``SPGR1``; little-endian header ``lat0, lon0, dlat, dlon``
    (float64) and ``nlat, nlon, ndays, start_days_since_1970`` (int64); then
    ``ndays*nlat*nlon`` little-endian float32 values, row-major, NaN missing.
    """
    g = grid.geometry
    header = struct.pack(
        "<4d4q",
        g.lat0,
        g.lon0,
        g.dlat,
        g.dlon,
        g.nlat,
        g.nlon,
        grid.ndays,
        (grid.start_date - _EPOCH).days,
    )
    with open(path, "wb") as fh:
        fh.write(_SPGR_MAGIC)
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_precip_binary(path) -> PrecipGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob:
        raise EmptyInputError(f"{path}: file is empty")
    if not blob.startswith(_SPGR_MAGIC):
        raise FormatError(f"{path}: bad magic, not a packed precipitation file")
    header_size = struct.calcsize("<4d4q")
    if len(blob) < len(_SPGR_MAGIC) + header_size:
        raise FormatError(f"{path}: truncated header")
    lat0, lon0, dlat, dlon, nlat, nlon, ndays, start_days = struct.unpack_from(
        "<4d4q", blob, len(_SPGR_MAGIC)
    )
    if dlat <= 0 or dlon <= 0 or nlat <= 0 or nlon <= 0 or ndays < 0:
        raise FormatError(f"{path}: invalid grid header")
    expected = ndays * nlat * nlon * 4
    payload = blob[len(_SPGR_MAGIC) + header_size:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(ndays, nlat, nlon).copy()
    geom = GridGeometry(lat0, lon0, dlat, dlon, int(nlat), int(nlon))
    return PrecipGrid(geom, _EPOCH + _dt.timedelta(days=int(start_days)), values)


def parse_landmask(path) -> LandMask:
    rows = _read_rows(path, ("lat", "lon", "land"))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    geom, cells = _grid_cells(rows, path, "land")
    land = np.zeros((geom.nlat, geom.nlon), dtype=bool)
    seen = set()
    for i, j, row in cells:
        if (i, j) in seen:
            raise FormatError(f"{path}: duplicate cell (lat={row['lat']}, lon={row['lon']})")
        seen.add((i, j))
        land[i, j] = _parse_flag(row.get("land"), path)
    return LandMask(geom, land)


def _parse_flag(text, path) -> bool:
    t = (text or "").strip().lower()
    if t in ("1", "true", "t", "yes"):
        return True
    if t in ("0", "false", "f", "no", ""):
        return False
    raise FormatError(f"{path}: bad boolean value {text!r}")


# ---------------------------------------------------------------------------
# Geographic entities


@dataclass(frozen=True, slots=True)
class Entity:
    entity_id: str
    name: str
    state: str
    centroid_lat: float
    centroid_lon: float
    coastal_state: bool


@dataclass
class EntityRegistry:
    entities: dict[str, Entity]
    n_dropped_rows: int = 0

    def __len__(self) -> int:
        return len(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def get(self, entity_id: str) -> Entity | None:
        return self.entities.get(entity_id)

    def sorted_ids(self) -> list[str]:
        return sorted(self.entities)


def parse_entities(path) -> EntityRegistry:
    """Parse the entity registry; duplicate ids are a format error."""
    rows = _read_rows(path, ("entity_id", "name", "state", "centroid_lat", "centroid_lon", "coastal_state"))
    entities: dict[str, Entity] = {}
    dropped = 0
    for row in rows:
        entity_id = (row.get("entity_id") or "").strip()
        state = (row.get("state") or "").strip().upper()
        lat = _float_or_none(row.get("centroid_lat"))
        lon = _float_or_none(row.get("centroid_lon"))
        try:
            coastal = _parse_flag(row.get("coastal_state"), path)
        except FormatError:
            dropped += 1
            continue
        if (
            not entity_id
            or len(state) != 2
            or lat is None
            or lon is None
            or not _ENTITY_LAT_BOUNDS[0] <= lat <= _ENTITY_LAT_BOUNDS[1]
            or not -180.0 <= lon < 180.0
        ):
            dropped += 1
            continue
        if entity_id in entities:
            raise FormatError(f"{path}: duplicate entity_id {entity_id!r}")
        entities[entity_id] = Entity(
            entity_id, (row.get("name") or "").strip(), state, lat, lon, coastal
        )
    return EntityRegistry(entities, n_dropped_rows=dropped)


# ---------------------------------------------------------------------------
# Employment panel


@dataclass
class EmploymentPanel:
    """Monthly employment keyed by (entity_id, ownership, sector, month index)."""

    data: dict[tuple[str, str, str, int], float]
    n_input_rows: int = 0
    n_dropped_rows: int = 0  # unknown codes / unusable row structure
    n_dropped_cells: int = 0  # negative, non-numeric, or out-of-range months

    def get(self, entity_id: str, ownership: str, sector: str, month: int) -> float | None:
        return self.data.get((entity_id, ownership, sector, month))

    def entity_ids(self) -> list[str]:
        return sorted({key[0] for key in self.data})

    def months(self) -> list[int]:
        return sorted({key[3] for key in self.data})


def parse_employment(path) -> EmploymentPanel:
    """Expand QCEW-style quarterly rows into the monthly panel.

    Unknown ownership or industry codes drop the whole row (counted, not
    fatal); negative or non-numeric employment drops the single month cell.
    """
    rows = _read_rows(
        path,
        ("area_fips", "own_code", "industry_code", "year", "qtr",
         "month1_emplvl", "month2_emplvl", "month3_emplvl"),
    )
    data: dict[tuple[str, str, str, int], float] = {}
    dropped_rows = 0
    dropped_cells = 0
    for row in rows:
        entity_id = (row.get("area_fips") or "").strip()
        ownership = OWNERSHIP_CODES.get((row.get("own_code") or "").strip())
        sector = SECTOR_CODES.get((row.get("industry_code") or "").strip())
        year = _float_or_none(row.get("year"))
        qtr = _float_or_none(row.get("qtr"))
        if (
            not entity_id
            or ownership is None
            or sector is None
            or year is None
            or qtr is None
            or year != int(year)
            or qtr not in (1.0, 2.0, 3.0, 4.0)
        ):
            dropped_rows += 1
            continue
        base_month = month_index(int(year), int(qtr - 1) * 3 + 1)
        for offset, col in enumerate(("month1_emplvl", "month2_emplvl", "month3_emplvl")):
            raw = (row.get(col) or "").strip()
            if not raw:
                continue  # genuinely absent record
            value = _float_or_none(raw)
            month = base_month + offset
            if value is None or value < 0 or not EMPLOYMENT_MONTH_MIN <= month <= EMPLOYMENT_MONTH_MAX:
                dropped_cells += 1
                continue
            key = (entity_id, ownership, sector, month)
            if key in data:
                raise FormatError(
                    f"{path}: duplicate employment record for {key[:3]} at month {month}"
                )
            data[key] = value
    return EmploymentPanel(
        data,
        n_input_rows=len(rows),
        n_dropped_rows=dropped_rows,
        n_dropped_cells=dropped_cells,
    )


_OWNERSHIP_TO_CODE = {v: k for k, v in OWNERSHIP_CODES.items()}
_SECTOR_TO_CODE = {v: k for k, v in SECTOR_CODES.items()}


def write_employment(panel: EmploymentPanel, path) -> None:
    """Serialize back to the QCEW-style quarterly layout (round-trip safe)."""
    quarters: dict[tuple[str, str, str, int, int], list[str]] = {}
    for (entity_id, ownership, sector, month), value in panel.data.items():
        year, m = month // 12, month % 12 + 1
        qtr = (m - 1) // 3 + 1
        offset = (m - 1) % 3
        key = (entity_id, ownership, sector, year, qtr)
        cells = quarters.setdefault(key, ["", "", ""])
        cells[offset] = _format_number(value)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["area_fips", "own_code", "industry_code", "year", "qtr",
             "month1_emplvl", "month2_emplvl", "month3_emplvl"]
        )
        for key in sorted(quarters):
            entity_id, ownership, sector, year, qtr = key
            writer.writerow(
                [entity_id, _OWNERSHIP_TO_CODE[ownership], _SECTOR_TO_CODE[sector],
                 year, qtr, *quarters[key]]
            )


def _format_number(x: float) -> str:
    if float(x) == int(x):
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# Socioeconomic covariates

COVARIATE_NAMES = ("income_per_capita", "workage_pop", "education")


@dataclass
class CovariatePanel:
    """Covariate values per entity, annual anchors or interpolated monthly.

    ``records[entity_id][variable]`` maps a period (calendar year when
    ``monthly`` is False, month index otherwise) to a value.  Entities with
    no usable anchors at all are listed in ``missing_entities``.
    """

    records: dict[str, dict[str, dict[int, float]]]
    monthly: bool = False
    missing_entities: set[str] = field(default_factory=set)
    n_dropped_cells: int = 0

    def value(self, entity_id: str, variable: str, period: int) -> float | None:
        by_var = self.records.get(entity_id)
        if by_var is None:
            return None
        return by_var.get(variable, {}).get(period)

    def month_values(self, entity_id: str, month: int) -> dict[str, float] | None:
        """All three covariates at a month, or None if any is unavailable."""
        if not self.monthly:
            raise ValueError("month_values requires an interpolated monthly panel")
        out = {}
        for name in COVARIATE_NAMES:
            v = self.value(entity_id, name, month)
            if v is None:
                return None
            out[name] = v
        return out


def parse_covariates(path) -> CovariatePanel:
    """Parse annual covariate anchors; bad cells are dropped and counted."""
    rows = _read_rows(path, ("entity_id", "year") + COVARIATE_NAMES)
    records: dict[str, dict[str, dict[int, float]]] = {}
    dropped_cells = 0
    seen = set()
    for row in rows:
        entity_id = (row.get("entity_id") or "").strip()
        year = _float_or_none(row.get("year"))
        if not entity_id or year is None or year != int(year):
            dropped_cells += len(COVARIATE_NAMES)
            continue
        year = int(year)
        if (entity_id, year) in seen:
            raise FormatError(f"{path}: duplicate covariate row ({entity_id}, {year})")
        seen.add((entity_id, year))
        for name in COVARIATE_NAMES:
            value = _float_or_none(row.get(name))
            if value is None:
                continue
            if value < 0 or (name == "education" and value > 100.0):
                dropped_cells += 1
                continue
            records.setdefault(entity_id, {}).setdefault(name, {})[year] = value
    return CovariatePanel(records, monthly=False, n_dropped_cells=dropped_cells)


def interpolate_covariates(cov: CovariatePanel, months: range) -> CovariatePanel:
    """Interpolate annual anchors to a monthly panel over ``months``.

    Annual values anchor at January of their year.  Between anchors the
    series is linear in the month index; before the first anchor it is held
    constant.  Beyond the last anchor, education continues on the slope of
    the last two anchors (clamped to [0, 100]) while the other variables
    hold their last value.  Entities with no anchors for some variable are
    flagged in ``missing_entities``.
    """
    if cov.monthly:
        raise ValueError("covariate panel is already monthly")
    records: dict[str, dict[str, dict[int, float]]] = {}
    missing: set[str] = set()
    for entity_id in sorted(cov.records):
        by_var = cov.records[entity_id]
        out_vars: dict[str, dict[int, float]] = {}
        for name in COVARIATE_NAMES:
            anchors = sorted(by_var.get(name, {}).items())
            if not anchors:
                missing.add(entity_id)
                continue
            out_vars[name] = _interpolate_one(anchors, months, extrapolate=(name == "education"))
        if len(out_vars) == len(COVARIATE_NAMES):
            records[entity_id] = out_vars
        else:
            missing.add(entity_id)
    return CovariatePanel(records, monthly=True, missing_entities=missing)


def _interpolate_one(anchors, months, extrapolate: bool) -> dict[int, float]:
    xs = np.array([month_index(year, 1) for year, _ in anchors], dtype=float)
    ys = np.array([value for _, value in anchors], dtype=float)
    out = {}
    for m in months:
        if len(xs) == 1:
            v = ys[0]
        elif m <= xs[0]:
            v = ys[0]
        elif m >= xs[-1]:
            if extrapolate:
                slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
                v = ys[-1] + slope * (m - xs[-1])
                v = min(max(v, 0.0), 100.0)
            else:
                v = ys[-1]
        else:
            v = float(np.interp(m, xs, ys))
        out[m] = float(v)
    return out
