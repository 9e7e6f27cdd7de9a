"""Event table and descriptive statistics.

One event row per incident that survives the employment filters, carrying
fractional employment changes for the thirteen industry aggregates at
Months 0..12 (Month 0 is the calendar month of closest approach, the
reference basis is Month -1), plus hazard features, covariates, and flags.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .errors import FormatError
from .hazard import Incident, _fmt
from .ingest import CovariatePanel, EmploymentPanel, EntityRegistry, SECTORS
from .months import format_month, parse_month

DEFAULT_LAGS = tuple(range(13))
DEFAULT_MIN_EMPLOYMENT = 100.0
DEFAULT_MIN_GROUP = 200

#: Hazard thresholds behind the named row filters (kt, kt, mm over 3 days).
DEFAULT_THRESHOLDS = {"strong_wind_kt": 64.0, "extreme_wind_kt": 96.0, "extreme_precip_mm": 150.0}


def fractional_change(
    panel: EmploymentPanel,
    entity_id: str,
    sector: str,
    ref_month: int,
    lag: int,
    ownership: str = "private",
) -> float | None:
    """Fractional employment change ``lag`` months after the basis month.

    The basis month is ``ref_month - 1`` (the month before storm impact),
    so the Month-k change of an event equals ``lag = k + 1``.  Returns None
    when the basis is missing or zero, or the target month is missing.
    """
    basis = panel.get(entity_id, ownership, sector, ref_month - 1)
    if basis is None or basis <= 0:
        return None
    value = panel.get(entity_id, ownership, sector, ref_month - 1 + lag)
    if value is None:
        return None
    return (value - basis) / basis


@dataclass
class EventRow:
    incident: Incident
    coastal_state: bool
    log10_basis_goods: float
    log10_basis_service: float
    deltas: np.ndarray  # (len(SECTORS), n_lags) float, NaN = missing
    covariates: dict[str, float] | None
    window_overlap: bool

    @property
    def covariates_available(self) -> bool:
        return self.covariates is not None

    def delta(self, sector: str, lag: int) -> float:
        return float(self.deltas[SECTORS.index(sector), lag])


@dataclass
class EventTable:
    rows: list[EventRow]
    lags: tuple[int, ...] = DEFAULT_LAGS
    exclusions: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        """Numeric column by name (``delta_<sector>_m<lag>`` or a field)."""
        return np.array([_row_value(row, name) for row in self.rows], dtype=float)


def _row_value(row: EventRow, name: str) -> float:
    if name.startswith("delta_"):
        sector, _, lag = name[len("delta_"):].rpartition("_m")
        return row.deltas[SECTORS.index(sector), int(lag)]
    inc = row.incident
    special = {
        "max_wind": inc.max_wind,
        "precip3d": inc.precip3d,
        "trans_speed": inc.trans_speed,
        "min_distance": inc.min_distance,
        "impact_doy": inc.impact_doy,
        "entity_lat": inc.entity_lat,
        "entity_lon": inc.entity_lon,
        "log10_basis_goods": row.log10_basis_goods,
        "log10_basis_service": row.log10_basis_service,
        "coastal_state": 1.0 if row.coastal_state else 0.0,
    }
    if name in special:
        v = special[name]
        return math.nan if v is None else float(v)
    if name in ("income_per_capita", "workage_pop", "education"):
        if row.covariates is None:
            return math.nan
        return row.covariates[name]
    raise KeyError(name)


def build_event_table(
    incidents: list[Incident],
    panel: EmploymentPanel,
    covariates: CovariatePanel | None,
    entities: EntityRegistry,
    lags: tuple[int, ...] = DEFAULT_LAGS,
    min_employment: float = DEFAULT_MIN_EMPLOYMENT,
    ownership: str = "private",
) -> EventTable:
    """Join incidents to lagged employment changes and covariates.

    Incidents are excluded (and counted by reason) when the entity is not
    in the registry, when the Month -1 goods or service basis is missing,
    or when either basis is below ``min_employment``.  Rows without
    covariates are kept with ``covariates_available`` unset.
    """
    if covariates is not None and not covariates.monthly:
        raise ValueError("covariates must be interpolated to monthly before joining")
    rows: list[EventRow] = []
    exclusions: dict[str, int] = {}
    by_entity: dict[str, list[int]] = {}
    for inc in incidents:
        by_entity.setdefault(inc.entity_id, []).append(inc.impact_month)
    for inc in incidents:
        entity = entities.get(inc.entity_id)
        if entity is None:
            exclusions["unknown_entity"] = exclusions.get("unknown_entity", 0) + 1
            continue
        basis_month = inc.impact_month - 1
        basis_goods = panel.get(inc.entity_id, ownership, "goods", basis_month)
        basis_service = panel.get(inc.entity_id, ownership, "service", basis_month)
        if basis_goods is None or basis_service is None or basis_goods <= 0 or basis_service <= 0:
            exclusions["missing_basis"] = exclusions.get("missing_basis", 0) + 1
            continue
        if basis_goods < min_employment or basis_service < min_employment:
            exclusions["min_employment"] = exclusions.get("min_employment", 0) + 1
            continue
        deltas = np.full((len(SECTORS), len(lags)), np.nan)
        for s, sector in enumerate(SECTORS):
            for k, lag in enumerate(lags):
                change = fractional_change(
                    panel, inc.entity_id, sector, inc.impact_month, lag + 1, ownership
                )
                if change is not None:
                    deltas[s, k] = change
        cov = None
        if covariates is not None:
            cov = covariates.month_values(inc.entity_id, inc.impact_month)
        # self counts once, so >1 means another storm's window overlaps
        overlap = (
            sum(1 for m in by_entity[inc.entity_id] if abs(m - inc.impact_month) <= max(lags))
            > 1
        )
        rows.append(
            EventRow(
                incident=inc,
                coastal_state=entity.coastal_state,
                log10_basis_goods=math.log10(basis_goods),
                log10_basis_service=math.log10(basis_service),
                deltas=deltas,
                covariates=cov,
                window_overlap=overlap,
            )
        )
    return EventTable(rows, tuple(lags), exclusions)


# ---------------------------------------------------------------------------
# Named row conditions (hazard filters)

CONDITION_NAMES = ("all", "strong_wind", "extreme_wind", "extreme_precip", "compound")


def named_condition(name: str, thresholds: dict[str, float] | None = None):
    """Predicate over EventRow for one of the named hazard filters."""
    t = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        t.update(thresholds)

    def wind_at_least(row: EventRow, kt: float) -> bool:
        w = row.incident.max_wind
        return w is not None and w >= kt

    def precip_at_least(row: EventRow, mm: float) -> bool:
        p = row.incident.precip3d
        return p is not None and p >= mm

    if name == "all":
        return lambda row: True
    if name == "strong_wind":
        return lambda row: wind_at_least(row, t["strong_wind_kt"])
    if name == "extreme_wind":
        return lambda row: wind_at_least(row, t["extreme_wind_kt"])
    if name == "extreme_precip":
        return lambda row: precip_at_least(row, t["extreme_precip_mm"])
    if name == "compound":
        return lambda row: wind_at_least(row, t["strong_wind_kt"]) and precip_at_least(
            row, t["extreme_precip_mm"]
        )
    raise ValueError(f"unknown condition {name!r}; expected one of {CONDITION_NAMES}")


# ---------------------------------------------------------------------------
# Conditioned distributions


@dataclass
class DistributionSummary:
    n: int
    mean: float
    sd: float
    skew: float


@dataclass
class ConditionedDistribution:
    sample: np.ndarray
    summary: DistributionSummary | None
    refused_small_sample: bool = False


def conditioned_distribution(
    table: EventTable,
    condition,
    sector: str = "service",
    month: int = 1,
    min_group: int = DEFAULT_MIN_GROUP,
    allow_small: bool = False,
) -> ConditionedDistribution:
    """Month-``month`` deltas of rows passing ``condition``, with summary.

    The summary is withheld for groups smaller than ``min_group`` unless
    ``allow_small`` is set; the raw sample is always returned.
    """
    s = SECTORS.index(sector)
    values = [
        row.deltas[s, month]
        for row in table.rows
        if condition(row) and not np.isnan(row.deltas[s, month])
    ]
    sample = np.array(values, dtype=float)
    if sample.size == 0:
        return ConditionedDistribution(sample, None)
    if sample.size < min_group and not allow_small:
        return ConditionedDistribution(sample, None, refused_small_sample=True)
    mean = math.fsum(values) / sample.size
    centered = sample - mean
    m2 = math.fsum(centered**2) / sample.size
    m3 = math.fsum(centered**3) / sample.size
    sd = math.sqrt(m2)
    skew = m3 / m2**1.5 if m2 > 0 else math.nan
    return ConditionedDistribution(
        sample, DistributionSummary(int(sample.size), mean, sd, skew)
    )


# ---------------------------------------------------------------------------
# Sector x lag composite matrix


def t_test_zero(values: np.ndarray) -> tuple[float, float]:
    """Two-sided one-sample t test against zero mean.

    The p-value is the regularized incomplete beta
    ``I_{v/(v+t^2)}(v/2, 1/2)`` with ``v = n - 1`` degrees of freedom,
    accurate to well below 1e-12 of the exact tail mass.
    """
    n = values.size
    if n < 2:
        raise ValueError("t test needs at least 2 observations")
    mean = math.fsum(values.tolist()) / n
    var = math.fsum(((v - mean) ** 2 for v in values.tolist())) / (n - 1)
    if var <= 0:
        raise ZeroDivisionError("zero variance sample")
    t = mean / math.sqrt(var / n)
    dof = n - 1
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return t, p


@dataclass
class CompositeCell:
    sector: str
    lag: int
    mean: float
    n: int
    t_stat: float | None
    p_value: float | None
    significant_99: bool | None
    degenerate: bool = False  # zero-variance sample, test undefined


def composite_matrix(
    table: EventTable,
    condition,
    sectors: tuple[str, ...] = SECTORS,
    lags: tuple[int, ...] | None = None,
    alpha: float = 0.01,
) -> list[CompositeCell]:
    """Mean employment change and significance per (sector, lag) cell.

    Cells with fewer than two observations report the mean without a test;
    zero-variance samples are flagged degenerate.  Cells with no data are
    omitted.  Means use compensated summation, so they are independent of
    row order.
    """
    lags = table.lags if lags is None else lags
    cells: list[CompositeCell] = []
    selected = [row for row in table.rows if condition(row)]
    for sector in sectors:
        s = SECTORS.index(sector)
        for lag in lags:
            k = table.lags.index(lag)
            values = np.array(
                [row.deltas[s, k] for row in selected if not np.isnan(row.deltas[s, k])]
            )
            if values.size == 0:
                continue
            mean = math.fsum(values.tolist()) / values.size
            if values.size < 2:
                cells.append(CompositeCell(sector, lag, mean, int(values.size), None, None, None))
                continue
            try:
                t, p = t_test_zero(values)
            except ZeroDivisionError:
                cells.append(
                    CompositeCell(sector, lag, mean, int(values.size), None, None, None, degenerate=True)
                )
                continue
            cells.append(
                CompositeCell(sector, lag, mean, int(values.size), t, p, p < alpha)
            )
    return cells


# ---------------------------------------------------------------------------
# Event table I/O

_BASE_COLUMNS = (
    "storm_id", "entity_id", "impact_month", "impact_doy", "max_wind",
    "precip3d", "precip_partial", "trans_speed", "min_distance",
    "entity_lat", "entity_lon", "coastal_state",
    "log10_basis_goods", "log10_basis_service",
    "income_per_capita", "workage_pop", "education",
    "covariates_available", "window_overlap",
)


def delta_columns(lags: tuple[int, ...] = DEFAULT_LAGS) -> list[str]:
    return [f"delta_{sector}_m{lag}" for sector in SECTORS for lag in lags]


def write_event_table(table: EventTable, path) -> None:
    """One row per incident; delta columns are named delta_<sector>_m<lag>."""
    columns = list(_BASE_COLUMNS) + delta_columns(table.lags)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in table.rows:
            inc = row.incident
            cov = row.covariates or {}
            record = [
                inc.storm_id, inc.entity_id, format_month(inc.impact_month),
                inc.impact_doy, _fmt(inc.max_wind), _fmt(inc.precip3d),
                _fmt(inc.precip_partial), _fmt(inc.trans_speed),
                _fmt(inc.min_distance), _fmt(inc.entity_lat), _fmt(inc.entity_lon),
                _fmt(row.coastal_state), _fmt(row.log10_basis_goods),
                _fmt(row.log10_basis_service),
                _fmt(cov.get("income_per_capita")), _fmt(cov.get("workage_pop")),
                _fmt(cov.get("education")), _fmt(row.covariates_available),
                _fmt(row.window_overlap),
            ]
            record.extend(_fmt(float(v)) for v in row.deltas.reshape(-1))
            writer.writerow(record)


def read_event_table(path) -> EventTable:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if any(c not in header for c in _BASE_COLUMNS):
            raise FormatError(f"{path}: malformed event table header")
        lag_set = sorted(
            {int(c.rpartition("_m")[2]) for c in header if c.startswith("delta_")}
        )
        lags = tuple(lag_set)
        rows = []
        for record in reader:
            inc = Incident(
                storm_id=record["storm_id"],
                entity_id=record["entity_id"],
                impact_month=parse_month(record["impact_month"]),
                impact_doy=int(record["impact_doy"]),
                max_wind=_opt(record["max_wind"]),
                precip3d=_opt(record["precip3d"]),
                precip_partial=record["precip_partial"] == "1",
                trans_speed=_opt(record["trans_speed"]),
                min_distance=float(record["min_distance"]),
                entity_lat=float(record["entity_lat"]),
                entity_lon=float(record["entity_lon"]),
            )
            deltas = np.full((len(SECTORS), len(lags)), np.nan)
            for s, sector in enumerate(SECTORS):
                for k, lag in enumerate(lags):
                    v = _opt(record.get(f"delta_{sector}_m{lag}", ""))
                    if v is not None:
                        deltas[s, k] = v
            cov = None
            if record["covariates_available"] == "1":
                cov = {
                    name: float(record[name])
                    for name in ("income_per_capita", "workage_pop", "education")
                }
            rows.append(
                EventRow(
                    incident=inc,
                    coastal_state=record["coastal_state"] == "1",
                    log10_basis_goods=float(record["log10_basis_goods"]),
                    log10_basis_service=float(record["log10_basis_service"]),
                    deltas=deltas,
                    covariates=cov,
                    window_overlap=record["window_overlap"] == "1",
                )
            )
    return EventTable(rows, lags)


def _opt(text: str) -> float | None:
    return None if text in ("", None) else float(text)


def write_composites(cells: list[CompositeCell], path) -> None:
    """Tidy composite matrix: sector, lag, mean, n, t, p, sig99."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sector", "lag", "mean", "n", "t", "p", "sig99", "degenerate"])
        for c in cells:
            writer.writerow(
                [
                    c.sector, c.lag, _fmt(c.mean), c.n, _fmt(c.t_stat),
                    _fmt(c.p_value),
                    "" if c.significant_99 is None else _fmt(c.significant_99),
                    _fmt(c.degenerate),
                ]
            )
