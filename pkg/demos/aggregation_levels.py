"""Forecasting a feeder from its parts.

A four-level synthetic metering tree (eight meters, four cabinets, two
substations, one feeder) is forecast at every level. Lower levels are
summed to the feeder by independent Monte Carlo sampling and all levels
are scored against the feeder's realised demand.
"""

from datetime import date, timedelta

from ecplf.bandwidth import BandwidthConfig
from ecplf.data_io import aggregation_study
from ecplf.features import Calendar
from ecplf.forecasting import ForecastConfig
from ecplf.synthetic import synthetic_hierarchy

hierarchy, power, temperature = synthetic_hierarchy(days=35, seed=2)
days = [date(2018, 1, 29) + timedelta(days=i) for i in range(5)]
config = ForecastConfig(seed=4, bandwidth=BandwidthConfig(method="rot"))

for level in range(1, hierarchy.n_levels + 1):
    print(f"L{level}: {', '.join(hierarchy.cut(level))}")
print()
print(f"{'level':<7}{'QL':>8}{'PICP 5-95':>11}{'PINAW 5-95':>12}")
for level, report, _ in aggregation_study(hierarchy, power, temperature, Calendar(), days, config,
                                          n_samples=5000):
    print(f"L{level:<6}{report.avg_ql:8.2f}{report.picp['5-95']:11.3f}{report.pinaw['5-95']:12.3f}")
