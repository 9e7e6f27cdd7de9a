import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stormpanel import ingest
from stormpanel.errors import EmptyInputError, FormatError
from stormpanel.months import month_index

from conftest import write_text

TRACK_HEADER = "storm_id,iso_time,lat,lon,wind_kt,pres_hpa\n"


def test_parse_tracks_identity(tmp_path):
    path = write_text(
        tmp_path / "t.csv",
        TRACK_HEADER
        + "S1,2004-08-01 00:00:00,25.0,-80.0,40,1000\n"
        + "S1,2004-08-01 03:00:00,25.3,-80.4,45,998\n"
        + "S1,2004-08-01 06:00:00,25.6,-80.8,50,995\n"
        + "S1,2004-08-01 09:00:00,25.9,-81.2,55,990\n",
    )
    ts = ingest.parse_tracks(path)
    assert ts.storm_ids == ["S1"]
    assert len(ts.storms["S1"]) == 4
    assert ts.n_dropped_rows == 0
    assert ts.storms["S1"][0].max_wind == 40.0


def test_parse_tracks_drops_bad_position(tmp_path):
    path = write_text(
        tmp_path / "t.csv",
        TRACK_HEADER
        + "S1,2004-08-01 00:00:00,91.0,-80.0,40,1000\n"
        + "S1,2004-08-01 03:00:00,25.3,-80.4,45,998\n",
    )
    ts = ingest.parse_tracks(path)
    assert ts.n_dropped_rows == 1
    assert len(ts.storms["S1"]) == 1


def test_parse_tracks_missing_wind_retained(tmp_path):
    path = write_text(
        tmp_path / "t.csv",
        TRACK_HEADER + "S1,2004-08-01 00:00:00,25.0,-80.0,,\n",
    )
    ts = ingest.parse_tracks(path)
    point = ts.storms["S1"][0]
    assert point.max_wind is None and point.min_pressure is None


def test_parse_tracks_katrina_subset(tmp_path):
    # AL122005 excerpt; the 2005-08-28 18Z fix is the published 150 kt / 902 hPa peak
    rows = [
        ("AL122005", "2005-08-23 18:00:00", 23.1, -75.1, 30, 1008),
        ("AL122005", "2005-08-24 12:00:00", 23.8, -76.2, 35, 1007),
        ("AL122005", "2005-08-25 22:30:00", 25.9, -80.3, 70, 984),
        ("AL122005", "2005-08-26 12:00:00", 25.1, -82.0, 85, 965),
        ("AL122005", "2005-08-27 12:00:00", 24.9, -84.6, 100, 942),
        ("AL122005", "2005-08-28 12:00:00", 25.2, -86.7, 145, 909),
        ("AL122005", "2005-08-28 18:00:00", 25.7, -87.7, 150, 902),
        ("AL122005", "2005-08-29 11:10:00", 29.3, -89.6, 110, 920),
        ("AL122005", "2005-08-29 18:00:00", 31.1, -89.6, 80, 948),
        ("AL122005", "2005-08-30 06:00:00", 34.1, -88.6, 40, 985),
    ]
    body = "".join(f"{s},{t},{lat},{lon},{w},{p}\n" for s, t, lat, lon, w, p in rows)
    ts = ingest.parse_tracks(write_text(tmp_path / "katrina.csv", TRACK_HEADER + body))
    assert ts.storm_ids == ["AL122005"]
    winds = [p.max_wind for p in ts.storms["AL122005"]]
    assert max(winds) >= 96.0
    assert min(p.min_pressure for p in ts.storms["AL122005"]) == 902.0


def test_parse_tracks_header_and_empty(tmp_path):
    with pytest.raises(FormatError):
        ingest.parse_tracks(write_text(tmp_path / "bad.csv", "storm,when\nS1,now\n"))
    with pytest.raises(EmptyInputError):
        ingest.parse_tracks(write_text(tmp_path / "empty.csv", ""))
    # header-only is a valid, empty track set
    assert ingest.parse_tracks(write_text(tmp_path / "h.csv", TRACK_HEADER)).storms == {}


def test_parse_tracks_duplicate_timestamps_dropped(tmp_path):
    path = write_text(
        tmp_path / "t.csv",
        TRACK_HEADER
        + "S1,2004-08-01 03:00:00,25.3,-80.4,45,998\n"
        + "S1,2004-08-01 00:00:00,25.0,-80.0,40,1000\n"
        + "S1,2004-08-01 03:00:00,25.4,-80.5,50,997\n",
    )
    ts = ingest.parse_tracks(path)
    stamps = [p.timestamp for p in ts.storms["S1"]]
    assert stamps == sorted(stamps) and len(stamps) == 2
    assert ts.n_dropped_rows == 1


@given(
    st.lists(
        st.tuples(
            st.integers(0, 2),  # storm
            st.integers(0, 200),  # hours offset
            st.floats(-89, 89),
            st.floats(-179.9, 179.9),
            st.one_of(st.none(), st.floats(0, 180)),
        ),
        max_size=40,
    )
)
@settings(max_examples=40, deadline=None)
def test_parse_tracks_accounting(tmp_path_factory, rows):
    """Drop counts + retained counts equal input row counts."""
    base = dt.datetime(2004, 8, 1)
    lines = [TRACK_HEADER]
    for storm, hours, lat, lon, wind in rows:
        stamp = (base + dt.timedelta(hours=hours)).strftime("%Y-%m-%d %H:%M:%S")
        wind_s = "" if wind is None else f"{wind:.1f}"
        lines.append(f"S{storm},{stamp},{lat:.4f},{lon:.4f},{wind_s},\n")
    path = write_text(tmp_path_factory.mktemp("acc") / "t.csv", "".join(lines))
    ts = ingest.parse_tracks(path)
    assert ts.n_points + ts.n_dropped_rows == len(rows)
    for points in ts.storms.values():
        stamps = [p.timestamp for p in points]
        assert all(a < b for a, b in zip(stamps, stamps[1:]))


PRECIP_HEADER = "date,lat,lon,precip_mm\n"


def test_parse_precip_dense_2x2(tmp_path):
    body = []
    for day in ("2004-08-01", "2004-08-02"):
        for lat in (25.0, 25.5):
            for lon in (-80.0, -79.5):
                body.append(f"{day},{lat},{lon},{abs(lat + lon)}\n")
    grid = ingest.parse_precip(write_text(tmp_path / "p.csv", PRECIP_HEADER + "".join(body)))
    assert grid.values.shape == (2, 2, 2)
    assert not np.isnan(grid.values).any()
    assert grid.geometry.dlat == 0.5 and grid.geometry.dlon == 0.5


def test_parse_precip_duplicate_cell_named(tmp_path):
    text = PRECIP_HEADER + "2004-08-01,25.0,-80.0,1\n2004-08-01,25.0,-80.0,2\n2004-08-01,25.5,-79.5,1\n"
    with pytest.raises(FormatError, match="duplicate cell"):
        ingest.parse_precip(write_text(tmp_path / "p.csv", text))


def test_parse_precip_inconsistent_spacing(tmp_path):
    text = PRECIP_HEADER + "".join(
        f"2004-08-01,{lat},-80.0,1\n" for lat in (25.0, 25.5, 25.7)
    ) + "2004-08-01,25.0,-79.5,1\n"
    with pytest.raises(FormatError, match="spacing"):
        ingest.parse_precip(write_text(tmp_path / "p.csv", text))


def test_parse_precip_negative_rejected(tmp_path):
    text = PRECIP_HEADER + "2004-08-01,25.0,-80.0,-1\n2004-08-01,25.5,-79.5,1\n"
    with pytest.raises(FormatError, match="negative"):
        ingest.parse_precip(write_text(tmp_path / "p.csv", text))


def test_precip_binary_round_trip(tmp_path):
    """Long CSV -> grid -> packed binary -> grid preserves every bit."""
    rng = np.random.default_rng(7)
    lines = [PRECIP_HEADER]
    base = dt.date(2004, 8, 1)
    for d in range(3):
        for lat in np.arange(25.0, 27.0, 0.5):
            for lon in np.arange(-81.0, -79.0, 0.5):
                if rng.random() < 0.15:
                    continue  # absent cell -> NaN
                day = (base + dt.timedelta(days=d)).isoformat()
                lines.append(f"{day},{lat},{lon},{rng.random() * 40:.4f}\n")
    grid = ingest.parse_precip(write_text(tmp_path / "p.csv", "".join(lines)))
    ingest.write_precip_binary(grid, tmp_path / "p.spgr")
    back = ingest.read_precip_binary(tmp_path / "p.spgr")
    assert back.geometry == grid.geometry
    assert back.start_date == grid.start_date
    assert np.array_equal(back.values, grid.values, equal_nan=True)


def test_precip_binary_bad_magic(tmp_path):
    path = tmp_path / "x.spgr"
    path.write_bytes(b"NOTIT" + b"\0" * 64)
    with pytest.raises(FormatError, match="magic"):
        ingest.read_precip_binary(path)


EMP_HEADER = "area_fips,own_code,industry_code,year,qtr,month1_emplvl,month2_emplvl,month3_emplvl\n"


def test_parse_employment_expands_quarters(tmp_path):
    body = "".join(
        f"01001,5,10,2004,{q},{100 + q},{200 + q},{300 + q}\n" for q in range(1, 5)
    )
    panel = ingest.parse_employment(write_text(tmp_path / "e.csv", EMP_HEADER + body))
    assert len(panel.data) == 12
    assert panel.get("01001", "private", "total", month_index(2004, 1)) == 101
    assert panel.get("01001", "private", "total", month_index(2004, 12)) == 304


def test_parse_employment_drops_negative_and_unknown(tmp_path):
    body = (
        "01001,5,10,2004,1,100,-5,120\n"  # one bad cell
        "01001,9,10,2004,2,1,2,3\n"  # unknown ownership -> row dropped
        "01001,5,9999,2004,2,1,2,3\n"  # unknown industry -> row dropped
    )
    panel = ingest.parse_employment(write_text(tmp_path / "e.csv", EMP_HEADER + body))
    assert panel.n_dropped_cells == 1
    assert panel.n_dropped_rows == 2
    assert len(panel.data) == 2


def test_parse_employment_duplicate_key_fatal(tmp_path):
    text = EMP_HEADER + "01001,5,10,2004,1,100,,\n01001,5,10,2004,1,110,,\n"
    with pytest.raises(FormatError, match="duplicate"):
        ingest.parse_employment(write_text(tmp_path / "e.csv", text))


def _employment_fixture():
    data = {}
    rng = np.random.default_rng(3)
    for entity in ("01001", "01003", "01005"):
        for sector in ("goods", "service"):
            for m in range(month_index(2004, 1), month_index(2004, 1) + 24):
                data[(entity, "private", sector, m)] = float(rng.integers(100, 5000))
    return ingest.EmploymentPanel(data)


def test_employment_round_trip(tmp_path):
    panel = _employment_fixture()
    path = tmp_path / "emp.csv"
    ingest.write_employment(panel, path)
    back = ingest.parse_employment(path)
    assert back.data == panel.data
    again = tmp_path / "emp2.csv"
    ingest.write_employment(back, again)
    assert path.read_bytes() == again.read_bytes()


@given(
    st.dictionaries(
        st.tuples(
            st.sampled_from(["01001", "01003"]),
            st.sampled_from(["private", "total"]),
            st.sampled_from(["goods", "service", "leisure_hospitality"]),
            st.integers(month_index(1990, 1), month_index(2021, 12)),
        ),
        st.integers(0, 10**7).map(float),
        max_size=60,
    )
)
@settings(max_examples=40, deadline=None)
def test_employment_round_trip_property(tmp_path_factory, data):
    panel = ingest.EmploymentPanel(dict(data))
    path = tmp_path_factory.mktemp("rt") / "emp.csv"
    ingest.write_employment(panel, path)
    assert ingest.parse_employment(path).data == panel.data


COV_HEADER = "entity_id,year,income_per_capita,workage_pop,education\n"


def _monthly(cov, months):
    return ingest.interpolate_covariates(cov, months)


def test_interpolate_linear_between_january_anchors(tmp_path):
    cov = ingest.parse_covariates(
        write_text(tmp_path / "c.csv", COV_HEADER + "A,2019,100,50,80\nA,2020,112,50,80\n")
    )
    monthly = _monthly(cov, range(month_index(2019, 1), month_index(2020, 12)))
    assert monthly.value("A", "income_per_capita", month_index(2019, 7)) == pytest.approx(106.0)
    assert monthly.value("A", "income_per_capita", month_index(2019, 1)) == 100.0


def test_interpolate_single_anchor_constant(tmp_path):
    cov = ingest.parse_covariates(write_text(tmp_path / "c.csv", COV_HEADER + "A,2019,90,90,90\n"))
    monthly = _monthly(cov, range(month_index(2018, 1), month_index(2021, 1)))
    values = {monthly.value("A", "workage_pop", m) for m in range(month_index(2018, 1), month_index(2021, 1))}
    assert values == {90.0}


def test_education_extrapolates_one_per_year(tmp_path):
    cov = ingest.parse_covariates(
        write_text(tmp_path / "c.csv", COV_HEADER + "A,2010,1,1,80\nA,2019,1,1,89\n")
    )
    monthly = _monthly(cov, range(month_index(2010, 1), month_index(2022, 1)))
    assert monthly.value("A", "education", month_index(2021, 1)) == pytest.approx(91.0)
    # the other variables hold their last anchor
    assert monthly.value("A", "income_per_capita", month_index(2021, 1)) == 1.0


def test_covariates_missing_entity_flagged(tmp_path):
    cov = ingest.parse_covariates(
        write_text(tmp_path / "c.csv", COV_HEADER + "A,2019,1,1,\nB,2019,1,1,50\n")
    )
    monthly = _monthly(cov, range(month_index(2019, 1), month_index(2019, 6)))
    assert "A" in monthly.missing_entities
    assert monthly.month_values("B", month_index(2019, 3)) is not None


@given(
    st.lists(
        st.tuples(st.integers(1995, 2020), st.floats(0, 1e6)), min_size=2, max_size=6,
        unique_by=lambda t: t[0],
    )
)
@settings(max_examples=50, deadline=None)
def test_interpolation_exact_at_anchors_and_monotone(anchors):
    records = {"A": {"income_per_capita": {y: v for y, v in anchors},
                     "workage_pop": {y: v for y, v in anchors},
                     "education": {y: min(v, 100.0) for y, v in anchors}}}
    cov = ingest.CovariatePanel(records)
    years = sorted(y for y, _ in anchors)
    monthly = _monthly(cov, range(month_index(years[0], 1), month_index(years[-1], 12) + 1))
    for y, v in anchors:
        assert monthly.value("A", "income_per_capita", month_index(y, 1)) == pytest.approx(v)
    values = [monthly.value("A", "income_per_capita", m)
              for m in range(month_index(years[0], 1), month_index(years[-1], 1) + 1)]
    anchor_vals = [v for _, v in sorted(anchors)]
    if anchor_vals == sorted(anchor_vals):
        assert all(a <= b + 1e-9 for a, b in zip(values, values[1:]))


ENT_HEADER = "entity_id,name,state,centroid_lat,centroid_lon,coastal_state\n"


def test_parse_entities_basic_and_duplicates(tmp_path):
    reg = ingest.parse_entities(
        write_text(tmp_path / "e.csv", ENT_HEADER + "01001,Autauga,AL,32.5,-86.6,1\n72001,Adjuntas,PR,18.2,-66.7,1\n")
    )
    assert len(reg) == 2 and reg.get("72001").coastal_state
    with pytest.raises(FormatError, match="duplicate"):
        ingest.parse_entities(
            write_text(tmp_path / "d.csv", ENT_HEADER + "01001,A,AL,32.5,-86.6,1\n01001,B,AL,32.6,-86.7,0\n")
        )


def test_parse_entities_drops_out_of_bounds(tmp_path):
    reg = ingest.parse_entities(
        write_text(tmp_path / "e.csv", ENT_HEADER + "01001,A,AL,80.0,-86.6,1\n01003,B,AL,30.7,-87.7,1\n")
    )
    assert len(reg) == 1 and reg.n_dropped_rows == 1


def test_parse_landmask(tmp_path):
    text = "lat,lon,land\n" + "".join(
        f"{lat},{lon},{int(lon > -80.5)}\n" for lat in (25.0, 25.5) for lon in (-81.0, -80.5, -80.0)
    )
    mask = ingest.parse_landmask(write_text(tmp_path / "m.csv", text))
    assert mask.is_land(25.1, -80.0)
    assert not mask.is_land(25.1, -81.0)
    assert not mask.is_land(40.0, -80.0)  # outside extent -> water
