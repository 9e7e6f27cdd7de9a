import datetime as dt
import math

import numpy as np
import pytest
from scipy.integrate import quad

from stormpanel import ingest, panel
from stormpanel.hazard import Incident
from stormpanel.ingest import CovariatePanel, EmploymentPanel, Entity, EntityRegistry, SECTORS
from stormpanel.months import month_index


def t_pdf(x, dof):
    c = math.exp(math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2)) / math.sqrt(dof * math.pi)
    return c * (1.0 + x * x / dof) ** (-(dof + 1) / 2)


def oracle_two_sided_p(t, dof):
    """Two-sided tail mass by direct quadrature of the density."""
    tail, _ = quad(t_pdf, abs(t), np.inf, args=(dof,), epsabs=1e-13, epsrel=1e-13)
    return 2.0 * tail


def _panel_from(series):
    """series: {(entity, sector): {month: value}} in private ownership."""
    data = {}
    for (entity, sector), by_month in series.items():
        for m, v in by_month.items():
            data[(entity, "private", sector, m)] = float(v)
    return EmploymentPanel(data)


M0 = month_index(2004, 9)


def _incident(entity_id, month=M0, wind=80.0, precip=50.0, lat=30.0, lon=-88.0):
    date = dt.date(month // 12, month % 12 + 1, 15)
    return Incident(
        storm_id="S1",
        entity_id=entity_id,
        impact_month=month,
        impact_doy=date.timetuple().tm_yday,
        max_wind=wind,
        precip3d=precip,
        precip_partial=False,
        trans_speed=12.0,
        min_distance=60.0,
        entity_lat=lat,
        entity_lon=lon,
    )


def _registry(ids, coastal=True):
    return EntityRegistry({e: Entity(e, e, "CS", 30.0, -88.0, coastal) for e in ids})


class TestFractionalChange:
    def test_hand_arithmetic(self):
        p = _panel_from({("A", "total"): {M0 - 1: 1000, M0: 900}})
        assert panel.fractional_change(p, "A", "total", M0, 1) == pytest.approx(-0.10)

    def test_unchanged_zero_at_every_lag(self):
        months = {M0 - 1 + k: 500 for k in range(0, 14)}
        p = _panel_from({("A", "total"): months})
        for lag in range(0, 14):
            assert panel.fractional_change(p, "A", "total", M0, lag) == 0.0

    def test_missing_reference(self):
        p = _panel_from({("A", "total"): {M0: 900}})
        assert panel.fractional_change(p, "A", "total", M0, 1) is None
        p0 = _panel_from({("A", "total"): {M0 - 1: 0, M0: 900}})
        assert panel.fractional_change(p0, "A", "total", M0, 1) is None

    def test_inverse_transform_recovers_employment(self):
        rng = np.random.default_rng(4)
        months = {M0 - 1 + k: float(rng.integers(100, 10000)) for k in range(0, 14)}
        p = _panel_from({("A", "goods"): months})
        basis = months[M0 - 1]
        for lag in range(0, 14):
            delta = panel.fractional_change(p, "A", "goods", M0, lag)
            assert basis * (1.0 + delta) == pytest.approx(months[M0 - 1 + lag], rel=1e-12)


def _full_series(entity, rng, basis=1000.0):
    series = {}
    for sector in SECTORS:
        level = basis * (0.2 + rng.random())
        series[(entity, sector)] = {
            m: level * (1.0 + 0.05 * rng.standard_normal())
            for m in range(M0 - 2, M0 + 13)
        }
    return series


def _monthly_covariates(ids, months=range(M0 - 2, M0 + 13)):
    records = {
        e: {name: {m: 10.0 + i for m in months}
            for i, name in enumerate(("income_per_capita", "workage_pop", "education"))}
        for e in ids
    }
    return CovariatePanel(records, monthly=True)


class TestBuildEventTable:
    def test_min_employment_exclusion(self):
        rng = np.random.default_rng(0)
        series = _full_series("A", rng)
        series[("A", "goods")] = {m: 99.0 for m in range(M0 - 2, M0 + 13)}
        table = panel.build_event_table(
            [_incident("A")], _panel_from(series), None, _registry(["A"])
        )
        assert len(table) == 0
        assert table.exclusions == {"min_employment": 1}

    def test_full_row_populated(self):
        rng = np.random.default_rng(1)
        table = panel.build_event_table(
            [_incident("A")], _panel_from(_full_series("A", rng)),
            _monthly_covariates(["A"]), _registry(["A"]),
        )
        assert len(table) == 1
        row = table.rows[0]
        assert row.deltas.shape == (len(SECTORS), 13)
        assert not np.isnan(row.deltas).any()
        assert row.covariates_available and row.coastal_state

    def test_hand_enumerated_eligibility(self):
        rng = np.random.default_rng(2)
        incidents, series, expected = [], {}, 0
        ids = []
        for i in range(20):
            entity = f"E{i:02d}"
            ids.append(entity)
            incidents.append(_incident(entity))
            series.update(_full_series(entity, rng))
            if i % 4 == 0:  # goods basis below threshold
                series[(entity, "goods")][M0 - 1] = 80.0
            elif i % 4 == 1:  # service basis missing
                del series[(entity, "service")][M0 - 1]
            else:
                expected += 1
        table = panel.build_event_table(incidents, _panel_from(series), None, _registry(ids))
        assert len(table) == expected
        assert table.exclusions["min_employment"] == 5
        assert table.exclusions["missing_basis"] == 5

    def test_unknown_entity_dropped(self):
        rng = np.random.default_rng(3)
        table = panel.build_event_table(
            [_incident("A"), _incident("B")],
            _panel_from(_full_series("A", rng)), None, _registry(["A"]),
        )
        assert table.exclusions == {"unknown_entity": 1}
        assert len(table) == 1

    def test_raising_min_employment_monotone(self):
        rng = np.random.default_rng(8)
        ids = [f"E{i}" for i in range(12)]
        series = {}
        for e in ids:
            series.update(_full_series(e, rng, basis=float(rng.integers(80, 3000))))
        incidents = [_incident(e) for e in ids]
        reg = _registry(ids)
        p = _panel_from(series)
        sizes = [
            len(panel.build_event_table(incidents, p, None, reg, min_employment=thr))
            for thr in (0.0, 50.0, 100.0, 500.0, 1e9)
        ]
        assert sizes == sorted(sizes, reverse=True)

    def test_window_overlap_flag(self):
        rng = np.random.default_rng(9)
        series = _full_series("A", rng)
        series.update({(k[0], k[1]): v for k, v in _full_series("A", rng).items()})
        incidents = [_incident("A", M0), _incident("A", M0 + 2)]
        incidents[1] = incidents[1].__class__(**{**incidents[1].__dict__, "storm_id": "S2"})
        table = panel.build_event_table(incidents, _panel_from(series), None, _registry(["A"]))
        assert all(row.window_overlap for row in table.rows)


def _table_with_deltas(service_m1, winds=None, coastal=None):
    rows = []
    n = len(service_m1)
    winds = winds or [80.0] * n
    coastal = coastal if coastal is not None else [True] * n
    for i, d in enumerate(service_m1):
        deltas = np.full((len(SECTORS), 13), np.nan)
        deltas[SECTORS.index("service"), 1] = d
        rows.append(
            panel.EventRow(
                incident=_incident(f"E{i:03d}", wind=winds[i]),
                coastal_state=coastal[i],
                log10_basis_goods=3.0,
                log10_basis_service=3.0,
                deltas=deltas,
                covariates=None,
                window_overlap=False,
            )
        )
    return panel.EventTable(rows)


class TestConditionedDistribution:
    def test_always_false_empty(self):
        table = _table_with_deltas([0.1, -0.2, 0.05])
        dist = panel.conditioned_distribution(table, lambda r: False, "service")
        assert dist.sample.size == 0 and dist.summary is None

    def test_small_sample_override(self):
        table = _table_with_deltas([0.01, -0.03, 0.02], winds=[100.0, 97.0, 50.0])
        cond = panel.named_condition("extreme_wind")
        refused = panel.conditioned_distribution(table, cond, "service")
        assert refused.refused_small_sample and refused.summary is None
        dist = panel.conditioned_distribution(table, cond, "service", allow_small=True)
        assert sorted(dist.sample.tolist()) == [-0.03, 0.01]
        assert dist.summary.n == 2

    def test_row_order_invariance(self):
        rng = np.random.default_rng(21)
        values = rng.normal(0, 0.05, 250).tolist()
        t1 = _table_with_deltas(values)
        t2 = _table_with_deltas(values[::-1])
        s1 = panel.conditioned_distribution(t1, lambda r: True, "service").summary
        s2 = panel.conditioned_distribution(t2, lambda r: True, "service").summary
        assert s1.mean == s2.mean and s1.sd == s2.sd and s1.skew == s2.skew


class TestCompositeMatrix:
    def test_all_zero_deltas(self):
        table = _table_with_deltas([0.0] * 10)
        cells = panel.composite_matrix(table, lambda r: True, sectors=("service",), lags=(1,))
        cell = cells[0]
        assert cell.mean == 0.0
        assert cell.degenerate and cell.significant_99 is None

    def test_zero_variance_flagged(self):
        table = _table_with_deltas([0.1, 0.1, 0.1, 0.1])
        cell = panel.composite_matrix(table, lambda r: True, sectors=("service",), lags=(1,))[0]
        assert cell.degenerate
        assert cell.mean == pytest.approx(0.1)
        assert cell.t_stat is None and cell.p_value is None

    def test_t_and_p_match_quadrature_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            n = int(rng.integers(3, 60))
            values = rng.normal(rng.uniform(-0.1, 0.1), rng.uniform(0.01, 0.2), n)
            t, p = panel.t_test_zero(values)
            mean = values.mean()
            sd = values.std(ddof=1)
            assert t == pytest.approx(mean / (sd / math.sqrt(n)), rel=1e-12)
            assert p == pytest.approx(oracle_two_sided_p(t, n - 1), abs=1e-9)

    def test_partition_mean_identity(self):
        rng = np.random.default_rng(5)
        values = rng.normal(0, 0.08, 400).tolist()
        table = _table_with_deltas(values)
        whole = panel.composite_matrix(table, lambda r: True, ("service",), (1,))[0]
        split = 157
        left = panel.composite_matrix(
            table, lambda r: int(r.incident.entity_id[1:]) < split, ("service",), (1,)
        )[0]
        right = panel.composite_matrix(
            table, lambda r: int(r.incident.entity_id[1:]) >= split, ("service",), (1,)
        )[0]
        combined = (left.mean * left.n + right.mean * right.n) / (left.n + right.n)
        assert whole.n == left.n + right.n
        assert whole.mean == pytest.approx(combined, abs=1e-12)

    def test_single_observation_reports_mean_only(self):
        table = _table_with_deltas([0.07])
        cell = panel.composite_matrix(table, lambda r: True, ("service",), (1,))[0]
        assert cell.n == 1 and cell.mean == pytest.approx(0.07)
        assert cell.t_stat is None and cell.significant_99 is None


def test_named_conditions():
    table = _table_with_deltas([0.0] * 4, winds=[100.0, 70.0, 40.0, None])
    for i, p3 in enumerate([200.0, 10.0, 160.0, None]):
        object.__setattr__(table.rows[i].incident, "precip3d", p3)
    names = {
        "all": 4,
        "strong_wind": 2,
        "extreme_wind": 1,
        "extreme_precip": 2,
        "compound": 1,
    }
    for name, expected in names.items():
        cond = panel.named_condition(name)
        assert sum(1 for r in table.rows if cond(r)) == expected
    with pytest.raises(ValueError):
        panel.named_condition("nope")


def test_event_table_round_trip(tmp_path, fixture_dir):
    from stormpanel import cli

    cfg = str(fixture_dir / "config.txt")
    assert cli.main(["link", "--config", cfg]) == 0
    assert cli.main(["table", "--config", cfg]) == 0
    path = fixture_dir / "out" / "events.csv"
    table = panel.read_event_table(path)
    again = tmp_path / "events2.csv"
    panel.write_event_table(table, again)
    assert path.read_bytes() == again.read_bytes()
