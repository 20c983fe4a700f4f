"""Multi-step probabilistic forecasting with scenario sampling.

A day-ahead run starts at the market cutoff on the previous day and walks
forward one 15-minute step at a time. Each step yields a conditional density
of the target rank; lagged power values that are not yet observed are
replaced by draws from earlier steps of the same scenario. Scenarios are
averaged step by step into the final mixture.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time

import numpy as np

from .bandwidth import WEEKDAYS, BandwidthConfig, optimize_ise, rule_of_thumb_for_data
from .data_io import QuantileForecast, TimeSeries
from .exceptions import ConfigError, DataError
from .features import STEPS_PER_DAY, Calendar, DesignMatrix, LagSpec, build_design_matrix, check_aligned
from .kernel import DEFAULT_GRID_SIZE, ConditionalDensityEstimator, GridDensity, as_bandwidths
from .metrics import QUANTILE_LEVELS
from .ranking import RankColumn, inverse_rank, pseudo_rank

__all__ = [
    "ForecastConfig",
    "LoadHistory",
    "ForecastDistribution",
    "Scenario",
    "CombinedForecast",
    "DayAheadProblem",
    "forecast_step",
    "run_scenario",
    "combine_scenarios",
    "day_ahead_forecast",
    "scenario_rng",
]

logger = logging.getLogger(__name__)

_U_EPS = 1e-12


@dataclass(frozen=True)
class ForecastConfig:
    lags: LagSpec = field(default_factory=LagSpec)
    grid_size: int = DEFAULT_GRID_SIZE
    scenarios: int = 50
    cutoff: time = time(10, 0)
    seed: int = 0
    workers: int = 1
    bandwidth: BandwidthConfig = field(default_factory=BandwidthConfig)
    #: Weekday name -> bandwidth vector, required by the ``ql`` method.
    weekday_bandwidths: dict | None = None

    def __post_init__(self):
        if self.scenarios < 1 or self.workers < 1 or self.grid_size < 2:
            raise ConfigError("scenarios, workers must be >= 1 and grid_size >= 2")
        if self.cutoff.minute % 15 or self.cutoff.second:
            raise ConfigError("cutoff must fall on a 15-minute boundary")

    def with_seed(self, seed: int) -> "ForecastConfig":
        return replace(self, seed=int(seed))

    @property
    def cutoff_step(self) -> int:
        return self.cutoff.hour * 4 + self.cutoff.minute // 15


@dataclass
class LoadHistory:
    """Power measurements, temperature (forecasts) and the day calendar."""

    power: TimeSeries
    temperature: TimeSeries
    calendar: Calendar = field(default_factory=Calendar)

    def __post_init__(self):
        check_aligned(self.power, self.temperature)

    @property
    def first_day(self) -> date:
        return self.power.start.date()

    def day_index(self, day: date) -> int:
        return (day - self.first_day).days

    def realized(self, day: date) -> np.ndarray:
        i = self.day_index(day) * STEPS_PER_DAY
        if i < 0 or i + STEPS_PER_DAY > len(self.power):
            raise DataError(f"no realised demand for {day.isoformat()}")
        y = self.power.values[i:i + STEPS_PER_DAY]
        if not np.all(np.isfinite(y)):
            raise DataError(f"realised demand for {day.isoformat()} has gaps")
        return y.copy()


@dataclass
class ForecastDistribution:
    """Predictive distribution of one step: a rank-space density plus its marginal map."""

    timestamp: datetime
    grid: GridDensity
    column: RankColumn

    def _to_physical(self, u):
        return inverse_rank(np.clip(u, _U_EPS, 1.0 - _U_EPS), self.column)

    def quantiles(self, alphas=QUANTILE_LEVELS):
        return self._to_physical(self.grid.quantile(alphas))

    def expected_value(self) -> float:
        return float(np.sum(self.grid.cell_mass * self._to_physical(self.grid.grid_points)))

    def sample(self, rng: np.random.Generator, size=None):
        return self._to_physical(self.grid.sample(rng, size))


@dataclass
class Scenario:
    distributions: list
    sampled_path: np.ndarray

    @property
    def H(self) -> int:
        return len(self.distributions)


@dataclass
class CombinedForecast:
    """Per-step scenario mixtures."""

    distributions: list

    @property
    def H(self) -> int:
        return len(self.distributions)

    @property
    def timestamps(self) -> list:
        return [d.timestamp for d in self.distributions]

    def quantile_table(self, alphas=QUANTILE_LEVELS) -> np.ndarray:
        return np.array([d.quantiles(alphas) for d in self.distributions])

    def expected(self) -> np.ndarray:
        return np.array([d.expected_value() for d in self.distributions])

    def to_quantile_forecast(self, alphas=QUANTILE_LEVELS) -> QuantileForecast:
        return QuantileForecast(self.timestamps, self.quantile_table(alphas), self.expected(),
                                np.asarray(alphas, dtype=float))


def forecast_step(matrix: DesignMatrix, h, conditioning, L: int = DEFAULT_GRID_SIZE,
                  timestamp=None, estimator: ConditionalDensityEstimator | None = None
                  ) -> ForecastDistribution:
    """Conditional predictive distribution for one step.

    ``conditioning`` holds one physical value per non-target column; each is
    placed in rank space against its own column before conditioning.
    """
    cond = np.atleast_1d(np.asarray(conditioning, dtype=float))
    if cond.size != matrix.D - 1:
        raise DataError(f"expected {matrix.D - 1} conditioning values, got {cond.size}")
    ranks = np.array([pseudo_rank(v, matrix.columns[c + 1]) for c, v in enumerate(cond)])
    est = estimator or ConditionalDensityEstimator(matrix.U, h, L)
    return ForecastDistribution(timestamp, est.density(ranks), matrix.target)


def combine_scenarios(scenarios) -> CombinedForecast:
    """Equal-weight mixture of the scenarios' step densities.

    The per-cell sum runs over sorted values, so the result does not depend
    on the order of ``scenarios``.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise DataError("no scenarios to combine")
    H = scenarios[0].H
    if any(s.H != H for s in scenarios):
        raise DataError("scenarios differ in horizon")
    out = []
    for j in range(H):
        dists = [s.distributions[j] for s in scenarios]
        L = dists[0].grid.L
        if any(d.grid.L != L for d in dists):
            raise DataError("scenarios differ in grid size")
        stack = np.sort(np.stack([d.grid.density for d in dists]), axis=0)
        mix = stack.sum(axis=0) / len(dists)
        mix = mix * (L / mix.sum())
        out.append(ForecastDistribution(dists[0].timestamp, GridDensity(mix), dists[0].column))
    return CombinedForecast(out)


def scenario_rng(seed: int, target: date, index: int) -> np.random.Generator:
    """Counter-based stream for one scenario of one forecast day."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(target.toordinal(), int(index)))
    return np.random.Generator(np.random.Philox(ss))


class DayAheadProblem:
    """Everything about one forecast day that does not depend on the random draws.

    Design matrices and kernel estimators are built once here and shared by
    all scenarios and all bandwidth-objective evaluations.
    """

    def __init__(self, history: LoadHistory, target: date, config: ForecastConfig):
        self.history = history
        self.target = target
        self.config = config
        self.lags = config.lags
        T = STEPS_PER_DAY
        d = history.day_index(target)
        if d < 1:
            raise DataError(f"no history before {target.isoformat()}")
        self.cutoff = (d - 1) * T + config.cutoff_step
        self.first_reported = d * T
        self.end = (d + 1) * T
        self.H = self.end - self.cutoff
        p = history.power.values
        if len(p) < self.cutoff:
            raise DataError(f"power history ends before the cutoff for {target.isoformat()}")
        if not np.isfinite(p[self.cutoff - 1]):
            raise DataError(f"history gap at the cutoff before {target.isoformat()}")
        self.known_power = TimeSeries(history.power.start, p[:self.cutoff].copy(), history.power.step,
                                      history.power.unit)
        min_lag = min(self.lags.power_lags) if self.lags.power_lags else np.inf
        self.needs_sampling = bool(min_lag <= self.H - 1)
        # Without short lags the intraday chain feeds nothing; skip it.
        first = self.cutoff if self.needs_sampling else self.first_reported
        self.steps = list(range(first, self.end))
        temp = history.temperature.values
        for t in self.steps:
            for b in self.lags.temperature_lags:
                i = t - b
                if i < 0 or i >= len(temp) or not np.isfinite(temp[i]):
                    raise DataError(
                        f"no temperature forecast for {history.temperature.timestamp(i).isoformat()}"
                    )
        self._matrices = {}
        self._estimators = {}
        self._rot = {}

    # -- data ---------------------------------------------------------------

    def timestamp(self, t: int) -> datetime:
        return self.history.power.timestamp(t)

    def matrix(self, t: int) -> DesignMatrix:
        if t not in self._matrices:
            day = self.timestamp(t).date()
            cluster = self.history.calendar.cluster(day)
            self._matrices[t] = build_design_matrix(
                self.known_power, self.history.temperature, self.lags, t % STEPS_PER_DAY, cluster,
                self.history.calendar,
            )
        return self._matrices[t]

    def known_conditioning(self, t: int):
        """Physical conditioning values of step ``t`` if all are observed, else ``None``."""
        vals = []
        for a in self.lags.power_lags:
            if t - a >= self.cutoff:
                return None
            vals.append(self.known_power.values[t - a])
        vals += [self.history.temperature.values[t - b] for b in self.lags.temperature_lags]
        return np.array(vals)

    # -- bandwidths ---------------------------------------------------------

    def ise_reference_step(self) -> int:
        """First target-day step whose conditioning is fully observed at the cutoff."""
        for t in range(self.first_reported, self.end):
            if self.known_conditioning(t) is not None:
                return t
        return self.cutoff

    def select_bandwidth(self):
        """Bandwidths for the configured method: a vector, or ``None`` for per-step rule of thumb."""
        cfg = self.config
        method = cfg.bandwidth.method
        if method == "rule_of_thumb":
            return None
        if method == "ql":
            table = cfg.weekday_bandwidths or {}
            key = WEEKDAYS[self.target.weekday()]
            if self.history.calendar.is_public_holiday(self.target) and self.target.weekday() < 5:
                key = "sunday"
            if key not in table:
                raise ConfigError(f"no QL bandwidths for {key}")
            return as_bandwidths(table[key], self.lags.D)
        t = self.ise_reference_step()
        M = self.matrix(t)
        cond = self.known_conditioning(t)
        if cond is None:
            cond = np.array([np.median(c.physical_sorted) for c in M.columns[1:]])
        ranks = np.array([pseudo_rank(v, M.columns[c + 1]) for c, v in enumerate(cond)])
        fit = optimize_ise(M.U, ranks, cfg.bandwidth, cfg.grid_size)
        self.ise_fit = fit
        return fit.h

    def step_bandwidth(self, t: int, h):
        if h is not None:
            return as_bandwidths(h, self.lags.D)
        if t not in self._rot:
            self._rot[t] = rule_of_thumb_for_data(self.matrix(t).U)
        return self._rot[t]

    def estimator(self, t: int, h) -> ConditionalDensityEstimator:
        hh = self.step_bandwidth(t, h)
        key = (t, hh.tobytes())
        if key not in self._estimators:
            self._estimators[key] = ConditionalDensityEstimator(self.matrix(t).U, hh, self.config.grid_size)
        return self._estimators[key]

    def prepare(self, h) -> None:
        """Build every matrix and estimator up front (needed before threading)."""
        for t in self.steps:
            self.estimator(t, h)

    # -- forecasting --------------------------------------------------------

    def run_scenario(self, h, rng: np.random.Generator) -> Scenario:
        path = np.full(self.H, np.nan)
        dists = []
        for t in self.steps:
            M = self.matrix(t)
            cond = []
            for a in self.lags.power_lags:
                i = t - a
                v = self.known_power.values[i] if i < self.cutoff else path[i - self.cutoff]
                if not np.isfinite(v):
                    raise DataError(f"history gap at {self.timestamp(i).isoformat()}")
                cond.append(v)
            cond += [self.history.temperature.values[t - b] for b in self.lags.temperature_lags]
            dist = forecast_step(M, None, cond, timestamp=self.timestamp(t), estimator=self.estimator(t, h))
            path[t - self.cutoff] = dist.sample(rng)
            dists.append(dist)
        return Scenario(dists, path)

    def forecast(self, h=None, scenarios: int | None = None, workers: int | None = None,
                 reported_only: bool = True) -> CombinedForecast:
        s = scenarios or self.config.scenarios
        if not self.needs_sampling:
            s = 1
        workers = workers or self.config.workers
        self.prepare(h)
        seed = self.config.seed

        def one(i):
            return self.run_scenario(h, scenario_rng(seed, self.target, i))

        if workers > 1 and s > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scen = list(pool.map(one, range(s)))
        else:
            scen = [one(i) for i in range(s)]
        combined = combine_scenarios(scen)
        if reported_only:
            keep = [i for i, t in enumerate(self.steps) if t >= self.first_reported]
            combined = CombinedForecast([combined.distributions[i] for i in keep])
        return combined


def run_scenario(history: LoadHistory, target: date, config: ForecastConfig, h, index: int = 0) -> Scenario:
    """One scenario over the full internal horizon (cutoff to end of ``target``)."""
    problem = DayAheadProblem(history, target, config)
    return problem.run_scenario(h, scenario_rng(config.seed, target, index))


def day_ahead_forecast(history: LoadHistory, target: date, config: ForecastConfig,
                       h=None, return_problem: bool = False):
    """Forecast the 96 steps of ``target`` from data up to the cutoff of the day before.

    ``h`` overrides the configured bandwidth selection.
    """
    problem = DayAheadProblem(history, target, config)
    if h is None:
        h = problem.select_bandwidth()
    problem.bandwidth_used = h
    fc = problem.forecast(h)
    if return_problem:
        return fc, problem
    return fc
