from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from ecplf.data_io import STEP_15, TimeSeries
from ecplf.exceptions import ConfigError, DataError, InsufficientHistoryError
from ecplf.features import (
    HOLIDAY,
    WORKING,
    Calendar,
    LagSpec,
    build_design_matrix,
    check_aligned,
    cluster_days,
    lagged_rows,
    load_calendar,
)
from ecplf.ranking import rank_knots

T0 = datetime(2018, 1, 1, tzinfo=timezone.utc)  # a Monday


def series(values, unit="kW"):
    return TimeSeries(T0, np.asarray(values, dtype=float), STEP_15, unit)


def ramp_pair(days):
    n = days * 96
    return series(np.arange(n, dtype=float)), series(1000.0 + np.arange(n, dtype=float), "degC")


def test_lagspec_dimensions():
    assert LagSpec((672,), (0,)).D == 3
    assert LagSpec((1, 12, 24, 96, 672), (0,)).D == 7
    assert LagSpec((672,), (0,)).column_names() == ["p", "p-672", "T-0"]
    assert LagSpec((1,), (-4,)).column_names() == ["p", "p-1", "T+4"]
    with pytest.raises(ConfigError):
        LagSpec((0,), (0,))
    with pytest.raises(ConfigError):
        LagSpec((1, 1), (0,))


def test_cluster_examples():
    cal = Calendar(frozenset({date(2018, 1, 3)}))
    assert cal.cluster(date(2018, 1, 6)) == HOLIDAY  # Saturday
    assert cal.cluster(date(2018, 1, 3)) == HOLIDAY  # configured Wednesday
    assert cal.cluster(date(2018, 1, 2)) == WORKING  # ordinary Tuesday
    assert cluster_days(cal, [date(2018, 1, 2), date(2018, 1, 7)]) == {
        date(2018, 1, 2): WORKING,
        date(2018, 1, 7): HOLIDAY,
    }
    assert Calendar(weekend_is_holiday=False).cluster(date(2018, 1, 6)) == WORKING


def test_load_calendar(tmp_path):
    path = tmp_path / "holidays.ini"
    path.write_text("[CH-VD]\n2018-01-01\n2018-01-02\n\n[DE]\n2018-10-03\nweekend_is_holiday = false\n")
    cal = load_calendar(path, "CH-VD")
    assert cal.holidays == {date(2018, 1, 1), date(2018, 1, 2)}
    assert cal.weekend_is_holiday
    de = load_calendar(path, "DE")
    assert not de.weekend_is_holiday and de.is_public_holiday(date(2018, 10, 3))
    with pytest.raises(ConfigError):
        load_calendar(path)  # two regions, none chosen
    with pytest.raises(ConfigError):
        load_calendar(path, "FR")
    path.write_text("[X]\nnot-a-date\n")
    with pytest.raises(ConfigError):
        load_calendar(path)


def test_design_matrix_shapes_and_range():
    p, t = ramp_pair(30)
    cal = Calendar()
    for lags, D in ((LagSpec((672,), (0,)), 3), (LagSpec((1, 12, 24, 96, 672), (0,)), 7)):
        M = build_design_matrix(p, t, lags, 40, WORKING, cal)
        assert M.D == D
        assert np.all((M.U > 0) & (M.U < 1))
        for c in range(D):
            np.testing.assert_array_equal(np.sort(M.U[:, c]), rank_knots(M.m))


def test_week_lag_addresses_same_step_one_week_earlier():
    p, t = ramp_pair(30)
    M = build_design_matrix(p, t, LagSpec((672,), (0,)), 17, WORKING, Calendar())
    for row, day in zip(M.physical, M.days):
        assert row[0] == day * 96 + 17
        assert row[1] == (day - 7) * 96 + 17
        assert row[2] == 1000.0 + day * 96 + 17


def test_lags_are_taken_before_clustering():
    # A Monday row with a one-day lag must see Sunday's (holiday) value.
    p, t = ramp_pair(21)
    M = build_design_matrix(p, t, LagSpec((96,), (0,)), 5, WORKING, Calendar())
    monday = int(np.flatnonzero(M.days == 7)[0])
    assert M.physical[monday, 1] == 6 * 96 + 5
    assert all((date(2018, 1, 1) + timedelta(days=int(d))).weekday() < 5 for d in M.days)


def test_constant_power_ranks_in_day_order():
    p = series(np.full(21 * 96, 50.0))
    t = series(np.random.default_rng(0).normal(size=21 * 96), "degC")
    M = build_design_matrix(p, t, LagSpec((672,), (0,)), 0, HOLIDAY, Calendar())
    np.testing.assert_array_equal(M.U[:, 0], rank_knots(M.m))


def test_missing_rows_are_dropped_and_counted():
    p, t = ramp_pair(30)
    values = p.values.copy()
    values[10 * 96 + 3] = np.nan  # target of day 10
    values[14 * 96 + 3 - 672] = np.nan  # week lag of day 14
    clean = build_design_matrix(p, t, LagSpec((672,), (0,)), 3, WORKING, Calendar())
    M = build_design_matrix(series(values), t, LagSpec((672,), (0,)), 3, WORKING, Calendar())
    assert clean.dropped == 5  # first working week has no week lag
    # each missing value is a target once and a week lag once
    assert M.dropped == clean.dropped + 4
    assert set(clean.days) - set(M.days) == {7, 10, 14, 17}
    assert np.all(np.isfinite(M.physical))


def test_insufficient_history_names_lag():
    p, t = ramp_pair(5)
    with pytest.raises(InsufficientHistoryError, match="672") as info:
        build_design_matrix(p, t, LagSpec((672,), (0,)), 0, WORKING, Calendar())
    assert info.value.lag == 672


def test_dropping_last_day_changes_one_row():
    p, t = ramp_pair(30)
    noisy = series(np.random.default_rng(1).normal(100, 10, 30 * 96))
    full = build_design_matrix(noisy, t, LagSpec((672,), (0,)), 30, WORKING, Calendar())
    short = build_design_matrix(series(noisy.values[: 29 * 96]), series(t.values[: 29 * 96], "degC"),
                                LagSpec((672,), (0,)), 30, WORKING, Calendar())
    assert full.m == short.m + 1
    np.testing.assert_array_equal(full.physical[:-1], short.physical)
    diff = np.abs(full.U[:-1] - short.U) * (full.m + 1)
    assert np.all(diff <= 1 + 1e-9 + full.U[:-1] / (short.m + 1) * (full.m + 1))


def test_negative_temperature_lag_reads_future_forecast():
    p, t = ramp_pair(20)
    R = lagged_rows(p, t, LagSpec((672,), (-4,)), np.array([700]))
    assert R[0, 2] == 1000.0 + 704


def test_alignment_checks():
    p, t = ramp_pair(2)
    check_aligned(p, t)
    with pytest.raises(DataError):
        check_aligned(p, TimeSeries(T0 + STEP_15, t.values, STEP_15))
    with pytest.raises(DataError):
        check_aligned(TimeSeries(T0 + STEP_15, p.values, STEP_15), TimeSeries(T0 + STEP_15, t.values, STEP_15))
    with pytest.raises(DataError):
        build_design_matrix(p, t, LagSpec(), 96, WORKING, Calendar())
