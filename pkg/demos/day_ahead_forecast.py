"""Day-ahead forecasts of a synthetic feeder against quantile regression.

Eight weeks of synthetic demand with heating load feed a one-week test.
Every test day is forecast from data available at 10:00 on the previous
day. The copula model chooses its bandwidth by leave-one-out ISE, the
baseline is a linear quantile regression on the same lags.
"""

from datetime import timedelta

from ecplf.forecasting import ForecastConfig, LoadHistory, day_ahead_forecast
from ecplf.metrics import average_reports, evaluate
from ecplf.qr_baseline import fit_qr_model, predict_day, training_rows
from ecplf.synthetic import synthetic_load

power, temperature = synthetic_load(63, seed=3)
history = LoadHistory(power, temperature)
days = [history.first_day + timedelta(days=i) for i in range(56, 63)]

config = ForecastConfig(seed=1)
ec = []
for day in days:
    fc, problem = day_ahead_forecast(history, day, config, return_problem=True)
    report = evaluate(fc.quantile_table(), history.realized(day), label=day.isoformat())
    ec.append(report)
    print(f"{day} {day.strftime('%a')}  h={problem.bandwidth_used.round(4)}  QL {report.avg_ql:6.2f}")

model = fit_qr_model(training_rows(power, temperature, history.calendar, end=56 * 96))
qr = [evaluate(predict_day(model, power, temperature, history.calendar, d), history.realized(d))
      for d in days]

print()
print(f"{'model':<22}{'QL':>8}{'PICP 5-95':>11}{'PICP 10-90':>12}{'PINAW 5-95':>12}")
for name, reports in (("copula, ISE bandwidth", ec), ("quantile regression", qr)):
    r = average_reports(reports)
    print(f"{name:<22}{r.avg_ql:8.2f}{r.picp['5-95']:11.3f}{r.picp['10-90']:12.3f}{r.pinaw['5-95']:12.3f}")
