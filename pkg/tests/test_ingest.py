import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrovalue.ingest import (
    InflowDataError,
    InflowSeries,
    SyntheticParams,
    load_inflow_csv,
    parse_units,
    synthesize_inflow,
    truncate_year53,
    write_inflow_csv,
)


def _csv(tmp_path, body, name="in.csv"):
    p = tmp_path / name
    p.write_text(body)
    return p


def test_three_rows_t_days(tmp_path):
    p = _csv(tmp_path, "year,week,inflow\n2000,1,10\n2000,2,20\n2000,3,30\n")
    with pytest.warns(UserWarning, match="incomplete"):
        s = load_inflow_csv(p, 1.0)
    assert len(s) == 3
    np.testing.assert_array_equal(s.t_days, [0.0, 7.0, 14.0])
    assert s.partial_final_year()


def test_week53_rejected(tmp_path):
    p = _csv(tmp_path, "year,week,inflow\n2000,52,1\n2000,53,2\n")
    with pytest.raises(InflowDataError, match="week out of range"):
        load_inflow_csv(p)


def test_row_errors_name_the_row(tmp_path):
    p = _csv(tmp_path, "year,week,inflow\n2000,1,5\n2000,2,-1\n")
    with pytest.raises(InflowDataError, match="row 3"):
        load_inflow_csv(p)
    p = _csv(tmp_path, "year,week,inflow\n2000,1,5\n2000,1,6\n", "dup.csv")
    with pytest.raises(InflowDataError, match="duplicate"):
        load_inflow_csv(p)
    p = _csv(tmp_path, "yr,wk,q\n", "hdr.csv")
    with pytest.raises(InflowDataError, match="header"):
        load_inflow_csv(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_inflow_csv(tmp_path / "nope.csv")


def test_unit_factor(tmp_path):
    p = _csv(tmp_path, "year,week,inflow\n" + "".join(f"2000,{w},168\n" for w in range(1, 53)))
    s = load_inflow_csv(p, parse_units("gwh-per-week"))
    assert s.inflow[0] == pytest.approx(1000.0)
    assert parse_units("cumecs:0.5") == 0.5
    with pytest.raises(InflowDataError):
        parse_units("furlongs")


def test_synthetic_count_and_determinism():
    s = synthesize_inflow(SyntheticParams(), 74, seed=3)
    assert len(s) == 3848
    s2 = synthesize_inflow(SyntheticParams(), 74, seed=3)
    np.testing.assert_array_equal(s.inflow, s2.inflow)
    assert not s.partial_final_year()


def test_synthetic_degenerate():
    s = synthesize_inflow(SyntheticParams(mean=500, amplitude=0, noise=0), 2, 0)
    assert np.all(s.inflow == 500.0)


def test_synthetic_amplitude_range():
    s = synthesize_inflow(SyntheticParams(mean=500, amplitude=200, noise=0), 1, 0)
    t = 7.0 * np.arange(52)
    expect = 200 * np.cos(SyntheticParams().omega * t + SyntheticParams().phase)
    rng = s.inflow.max() - s.inflow.min()
    assert rng == pytest.approx(expect.max() - expect.min(), abs=1e-9)
    assert abs(rng - 400.0) < 400.0 * (1 - math.cos(math.pi / 52)) + 1e-9


def test_truncate_year53():
    start = dt.date(2001, 1, 1)
    raw = [(start + dt.timedelta(days=7 * i), 1.0) for i in range(52)]
    s = truncate_year53(raw)
    assert len(s) == 52
    # 2004 has 53 Thursdays-style weekly starts beginning Jan 1
    start = dt.date(2004, 1, 1)
    raw = [(start + dt.timedelta(days=7 * i), 1.0) for i in range(53)]
    raw[51] = (raw[51][0], 100.0)
    raw[52] = (raw[52][0], 300.0)
    s = truncate_year53(raw)
    assert len(s) == 52 and s.inflow[-1] == 200.0
    two = [(dt.date(2001, 1, 1) + dt.timedelta(days=7 * i), 1.0) for i in range(52)]
    two += [(dt.date(2002, 1, 1) + dt.timedelta(days=7 * i), 1.0) for i in range(52)]
    assert len(truncate_year53(two)) == 104
    with pytest.raises(InflowDataError, match="missing weeks"):
        truncate_year53(two[:-3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_nan=False, allow_infinity=False), min_size=1, max_size=120))
def test_csv_round_trip(tmp_path_factory, flows):
    n = len(flows)
    years = [1990 + i // 52 for i in range(n)]
    weeks = [1 + i % 52 for i in range(n)]
    s = InflowSeries.from_arrays(years, weeks, flows)
    p = tmp_path_factory.mktemp("rt") / "s.csv"
    write_inflow_csv(s, p)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        back = load_inflow_csv(p)
    assert back == s


def test_series_invariants():
    with pytest.raises(InflowDataError, match="ordered"):
        InflowSeries.from_arrays([2000, 2000], [2, 1], [1, 1])
    with pytest.raises(InflowDataError):
        InflowSeries.from_arrays([2000], [1], [float("nan")])
