import json
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from ecplf.bandwidth import BandwidthConfig
from ecplf.data_io import (
    STEP_10,
    STEP_15,
    MeterHierarchy,
    QuantileForecast,
    TimeSeries,
    aggregate_forecasts,
    aggregation_study,
    downsample_10_to_15,
    load_csv,
    load_hierarchy,
    node_seed,
    read_forecast_csv,
    validate_hierarchy,
    write_csv,
    write_forecast_csv,
)
from ecplf.exceptions import ConfigError, DataError
from ecplf.features import Calendar
from ecplf.forecasting import ForecastConfig, LoadHistory, day_ahead_forecast
from ecplf.metrics import QUANTILE_LEVELS, evaluate
from ecplf.synthetic import synthetic_hierarchy

T0 = datetime(2018, 1, 1, tzinfo=timezone.utc)


def write_rows(path, rows):
    path.write_text("timestamp,value\n" + "".join(f"{ts},{v}\n" for ts, v in rows))
    return path


def stamps(n, step=STEP_15):
    return [(T0 + i * step).isoformat() for i in range(n)]


# -- load_csv ----------------------------------------------------------------

def test_load_full_day(tmp_path):
    path = write_rows(tmp_path / "p.csv", zip(stamps(96), range(96)))
    s = load_csv(path, unit="kW")
    assert len(s) == 96 and s.n_gaps == 0
    assert s.start == T0 and s.step == STEP_15
    write_csv(s, tmp_path / "q.csv")
    again = load_csv(tmp_path / "q.csv")
    np.testing.assert_array_equal(again.values, s.values)


def test_missing_row_becomes_gap(tmp_path):
    rows = list(zip(stamps(96), range(96)))
    del rows[40]
    s = load_csv(write_rows(tmp_path / "p.csv", rows))
    assert len(s) == 96 and s.n_gaps == 1 and np.isnan(s.values[40])


@pytest.mark.parametrize("mutate, message", [
    (lambda r: r[:10] + [r[9]] + r[10:], "duplicate"),
    (lambda r: r[:10] + [r[11], r[10]] + r[12:], "out of order"),
    (lambda r: r + [("2018-01-01T23:59:00+00:00", 1)], "grid"),
])
def test_load_rejects_bad_timestamps(tmp_path, mutate, message):
    rows = list(zip(stamps(20), range(20)))
    with pytest.raises(DataError, match=message):
        load_csv(write_rows(tmp_path / "p.csv", mutate(rows)))


def test_load_rejects_bad_header(tmp_path):
    (tmp_path / "p.csv").write_text("time,kw\n2018-01-01T00:00:00+00:00,1\n")
    with pytest.raises(DataError, match="header"):
        load_csv(tmp_path / "p.csv")


# -- downsampling --------------------------------------------------------------

def ten(values, start=T0):
    return TimeSeries(start, np.asarray(values, dtype=float), STEP_10)


def test_downsample_hand_example():
    # Windows [0,15) [15,30) [30,45) [45,60): (0+1.5)/1.5, (1.5+0)/1.5, (3+0)/1.5, (0+3)/1.5.
    out = downsample_10_to_15(ten([0, 3, 0, 3, 0, 3]))
    np.testing.assert_allclose(out.values, [1, 1, 2, 2])
    assert out.step == STEP_15


def test_downsample_constant_and_energy(rng):
    np.testing.assert_allclose(downsample_10_to_15(ten(np.full(144, 7.25))).values, 7.25)
    x = rng.normal(size=144)
    out = downsample_10_to_15(ten(x))
    assert len(out) == 96
    assert out.values.sum() == pytest.approx(2.0 / 3.0 * x.sum(), rel=1e-12)


def test_downsample_ramp_per_block():
    # A linear ramp is reproduced exactly as a pair of values per 30-minute
    # block whose mean equals the block mean of the ramp.
    x = 2.0 + 0.5 * np.arange(12)
    out = downsample_10_to_15(ten(x)).values
    np.testing.assert_allclose(out.reshape(-1, 2).mean(axis=1), x.reshape(-1, 3).mean(axis=1))
    np.testing.assert_allclose(np.diff(out.reshape(-1, 2), axis=1).ravel(), 0.5 * 4 / 3)


def test_downsample_gap_and_errors():
    x = np.arange(12.0)
    x[4] = np.nan  # middle value of block 1 touches both windows
    out = downsample_10_to_15(ten(x)).values
    assert np.isnan(out[2]) and np.isnan(out[3])
    assert np.isfinite(out[[0, 1, 4, 5, 6, 7]]).all()
    with pytest.raises(DataError):
        downsample_10_to_15(ten(x, T0 + STEP_10))
    with pytest.raises(DataError):
        downsample_10_to_15(TimeSeries(T0, x, STEP_15))


# -- forecast files --------------------------------------------------------------

def test_forecast_csv_round_trip(tmp_path):
    ts = [T0 + i * STEP_15 for i in range(3)]
    q = np.sort(np.random.default_rng(0).normal(size=(3, 99)), axis=1)
    fc = QuantileForecast(ts, q, q.mean(axis=1))
    write_forecast_csv(fc, tmp_path / "f.csv")
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["timestamp", "expected_value_kW", "q01", "q02"] and header[-1] == "q99"
    back = read_forecast_csv(tmp_path / "f.csv")
    assert back.timestamps == ts
    np.testing.assert_allclose(back.quantiles, q, atol=5e-7)
    np.testing.assert_allclose(back.alphas, QUANTILE_LEVELS)


# -- hierarchy -----------------------------------------------------------------

def unbalanced():
    return MeterHierarchy("root", {"root": ["A", "m3"], "A": ["m1", "m2"]})


def test_hierarchy_levels_and_cut(tmp_path):
    h = unbalanced()
    assert h.n_levels == 3 and h.leaves == ["m1", "m2", "m3"]
    assert h.level_of("root") == 3 and h.level_of("A") == 2 and h.level_of("m1") == 1
    assert h.cut(3) == ["root"]
    assert h.cut(2) == ["A", "m3"]
    assert h.cut(1) == ["m1", "m2", "m3"]
    with pytest.raises(ConfigError):
        h.cut(4)
    (tmp_path / "h.json").write_text(json.dumps({"root": h.root, "children": h.children}))
    assert load_hierarchy(tmp_path / "h.json").cut(2) == ["A", "m3"]
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ConfigError):
        load_hierarchy(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        MeterHierarchy("root", {"root": ["A"], "B": ["c"]})


def test_validate_hierarchy():
    h = unbalanced()
    m = {k: TimeSeries(T0, np.full(4, v)) for k, v in (("m1", 1.0), ("m2", 2.0), ("m3", 3.0))}
    series = dict(m, A=TimeSeries(T0, np.full(4, 3.0)), root=TimeSeries(T0, np.full(4, 6.01)))
    dev = validate_hierarchy(h, series)
    assert dev["A"] == 0.0 and dev["root"] == pytest.approx(0.01 / 6.01)
    series["root"] = TimeSeries(T0, np.full(4, 6.1))
    with pytest.raises(DataError, match="root"):
        validate_hierarchy(h, series)


def test_node_seed_is_stable():
    assert node_seed(3, "S1") == node_seed(3, "S1")
    assert node_seed(3, "S1") != node_seed(3, "S2")
    assert node_seed(3, "S1") != node_seed(4, "S1")


# -- aggregation -----------------------------------------------------------------

class PointMass:
    def __init__(self, v):
        self.v = v

    def sample(self, rng, size):
        return np.full(size, self.v)


class Uniform:
    def sample(self, rng, size):
        return rng.uniform(size=size)


def triangular_quantile(a):
    return np.where(a <= 0.5, np.sqrt(2 * a), 2 - np.sqrt(2 * (1 - a)))


def test_aggregate_point_masses_exact():
    q, e = aggregate_forecasts([[PointMass(1.5), PointMass(-2.0)], [PointMass(0.25), PointMass(4.0)]],
                               n_samples=100)
    assert np.all(q[0] == 1.75) and np.all(q[1] == 2.0)
    np.testing.assert_array_equal(e, [1.75, 2.0])


def test_aggregate_two_uniforms_is_triangular():
    q, _ = aggregate_forecasts([[Uniform()], [Uniform()]], n_samples=100_000, seed=1)
    assert np.max(np.abs(q[0] - triangular_quantile(QUANTILE_LEVELS))) < 0.01
    assert np.all(np.diff(q[0]) >= 0)


def test_aggregate_single_child_and_errors():
    n = 10_000
    q, _ = aggregate_forecasts([[Uniform()]], n_samples=n, seed=2)
    assert np.max(np.abs(q[0] - QUANTILE_LEVELS)) < 3 / np.sqrt(n)
    a1, _ = aggregate_forecasts([[Uniform()], [Uniform()]], n_samples=500, seed=5)
    a2, _ = aggregate_forecasts([[Uniform()], [Uniform()]], n_samples=500, seed=5)
    np.testing.assert_array_equal(a1, a2)
    with pytest.raises(DataError):
        aggregate_forecasts([[Uniform()], [Uniform(), Uniform()]])
    with pytest.raises(DataError):
        aggregate_forecasts([])


def test_aggregation_study_top_level_is_direct_forecast():
    hierarchy, power, temperature = synthetic_hierarchy(days=22, seed=4)
    assert validate_hierarchy(hierarchy, power)["root"] < 1e-12
    config = ForecastConfig(scenarios=1, seed=9, bandwidth=BandwidthConfig(method="rot"))
    day = date(2018, 1, 22)
    results = aggregation_study(hierarchy, power, temperature, Calendar(), [day], config,
                                levels=[3, 4], n_samples=2000)
    assert [r[0] for r in results] == [3, 4]
    assert set(results[0][2]) == {"S1", "S2"}

    history = LoadHistory(power["root"], temperature)
    direct = day_ahead_forecast(history, day, config.with_seed(node_seed(9, "root")))
    expected = evaluate(direct.quantile_table(), history.realized(day))
    assert results[1][1].avg_ql == expected.avg_ql
    assert results[1][1].picp == expected.picp
    assert np.isfinite(results[0][1].avg_ql)


def test_aggregation_study_parallel_nodes_match_serial():
    hierarchy, power, temperature = synthetic_hierarchy(days=22, seed=5)
    day = [date(2018, 1, 22)]
    serial = ForecastConfig(scenarios=1, seed=2, bandwidth=BandwidthConfig(method="rot"))
    parallel = ForecastConfig(scenarios=1, seed=2, workers=4, bandwidth=BandwidthConfig(method="rot"))
    a = aggregation_study(hierarchy, power, temperature, Calendar(), day, serial, n_samples=1000)
    b = aggregation_study(hierarchy, power, temperature, Calendar(), day, parallel, n_samples=1000)
    assert [(lv, r.avg_ql, r.picp, s) for lv, r, s in a] == [(lv, r.avg_ql, r.picp, s) for lv, r, s in b]
