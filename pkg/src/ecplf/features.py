"""Rank-space design matrices built from lagged power and temperature.

For a step-of-day ``j`` each historical day contributes one row::

    p_j, p_{j-a_1}, ..., p_{j-a_k}, theta_{j-b_1}, ..., theta_{j-b_g}

Lags are taken on the full, unclustered series; only afterwards are rows
restricted to days of the requested cluster. Each column is then rank
transformed on its own.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from .data_io import STEP_15, TimeSeries
from .exceptions import ConfigError, DataError, InsufficientHistoryError
from .ranking import RankColumn, rank_transform

__all__ = [
    "WORKING",
    "HOLIDAY",
    "STEPS_PER_DAY",
    "LagSpec",
    "Calendar",
    "load_calendar",
    "cluster_days",
    "DesignMatrix",
    "check_aligned",
    "lagged_rows",
    "build_design_matrix",
]

WORKING = "working"
HOLIDAY = "holiday"
STEPS_PER_DAY = 96


@dataclass(frozen=True)
class LagSpec:
    """Power lags (positive) and temperature lags (any sign) in 15-min steps."""

    power_lags: tuple = (672,)
    temperature_lags: tuple = (0,)

    def __post_init__(self):
        pl = tuple(int(a) for a in self.power_lags)
        tl = tuple(int(b) for b in self.temperature_lags)
        if any(a <= 0 for a in pl):
            raise ConfigError("power lags must be strictly positive")
        if len(set(pl)) != len(pl) or len(set(tl)) != len(tl):
            raise ConfigError("lags must be distinct")
        object.__setattr__(self, "power_lags", pl)
        object.__setattr__(self, "temperature_lags", tl)

    @property
    def D(self) -> int:
        return 1 + len(self.power_lags) + len(self.temperature_lags)

    def column_names(self) -> list:
        return (["p"] + [f"p-{a}" for a in self.power_lags]
                + [f"T-{b}" if b >= 0 else f"T+{-b}" for b in self.temperature_lags])


@dataclass(frozen=True)
class Calendar:
    """Working-day / holiday partition of dates."""

    holidays: frozenset = frozenset()
    weekend_is_holiday: bool = True

    def cluster(self, day) -> str:
        if isinstance(day, datetime):
            day = day.date()
        if day in self.holidays:
            return HOLIDAY
        if self.weekend_is_holiday and day.weekday() >= 5:
            return HOLIDAY
        return WORKING

    def is_public_holiday(self, day) -> bool:
        if isinstance(day, datetime):
            day = day.date()
        return day in self.holidays


def load_calendar(path, region: str | None = None) -> Calendar:
    """Read holiday dates listed one per line under ``[region]`` headers.

    A section may also set ``weekend_is_holiday = false``.
    """
    parser = configparser.ConfigParser(allow_no_value=True, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: cannot read calendar ({exc})") from exc
    sections = parser.sections()
    if region is None:
        if len(sections) != 1:
            raise ConfigError(f"{path}: choose a region among {sections}")
        region = sections[0]
    if region not in parser:
        raise ConfigError(f"{path}: no region {region!r}")
    holidays = set()
    weekend = True
    for key, value in parser[region].items():
        if key.strip().lower() == "weekend_is_holiday":
            weekend = parser[region].getboolean(key)
            continue
        try:
            holidays.add(date.fromisoformat(key.strip()))
        except ValueError as exc:
            raise ConfigError(f"{path}: bad date {key!r}") from exc
    return Calendar(frozenset(holidays), weekend)


def cluster_days(calendar: Calendar, dates) -> dict:
    """Map each date to ``"working"`` or ``"holiday"``."""
    return {d: calendar.cluster(d) for d in dates}


@dataclass
class DesignMatrix:
    """Copula data for one step-of-day and cluster.

    ``U[:, 0]`` is the target; ``columns[c]`` maps column ``c`` between
    physical and rank space.
    """

    U: np.ndarray
    columns: list
    step: int
    cluster: str
    days: np.ndarray
    lags: LagSpec
    physical: np.ndarray = field(repr=False, default=None)
    dropped: int = 0

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def D(self) -> int:
        return self.U.shape[1]

    @property
    def target(self) -> RankColumn:
        return self.columns[0]


def check_aligned(power: TimeSeries, temperature: TimeSeries) -> None:
    if power.step != STEP_15 or temperature.step != STEP_15:
        raise DataError("series must be sampled every 15 minutes")
    if power.start != temperature.start:
        raise DataError("power and temperature series must start together")
    s = power.start
    if (s.hour, s.minute, s.second, s.microsecond) != (0, 0, 0, 0):
        raise DataError("series must start at midnight")


def _take(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    ok = (idx >= 0) & (idx < values.size)
    out = np.full(idx.shape, np.nan)
    out[ok] = values[idx[ok]]
    return out


def lagged_rows(power: TimeSeries, temperature: TimeSeries, lags: LagSpec, t) -> np.ndarray:
    """Physical rows ``(p_t, p_{t-a}..., theta_{t-b}...)`` for absolute indices ``t``.

    Positions outside the series come back as NaN.
    """
    t = np.asarray(t, dtype=int)
    cols = [_take(power.values, t)]
    cols += [_take(power.values, t - a) for a in lags.power_lags]
    cols += [_take(temperature.values, t - b) for b in lags.temperature_lags]
    return np.column_stack(cols)


def build_design_matrix(power: TimeSeries, temperature: TimeSeries, lags: LagSpec, j: int,
                        cluster: str, calendar: Calendar) -> DesignMatrix:
    """Rank-space data matrix for step-of-day ``j`` restricted to ``cluster``.

    Rows with any missing value are dropped (never imputed); the number of
    dropped rows is kept on the result.
    """
    check_aligned(power, temperature)
    if not 0 <= j < STEPS_PER_DAY:
        raise DataError(f"step of day {j} outside 0..{STEPS_PER_DAY - 1}")
    n_days = -(-len(power) // STEPS_PER_DAY)
    day0 = power.start.date()
    day_idx = np.arange(n_days)
    in_cluster = np.array([calendar.cluster(day0 + timedelta(days=int(i))) == cluster for i in day_idx],
                          dtype=bool)
    t = day_idx * STEPS_PER_DAY + j
    candidates = in_cluster & (t < len(power))
    if not np.any(candidates):
        raise DataError(f"no {cluster} days in the history")
    tc = t[candidates]
    for a in lags.power_lags:
        if not np.any(tc - a >= 0):
            raise InsufficientHistoryError(a, f"insufficient history for power lag {a}")
    for b in lags.temperature_lags:
        if not np.any((tc - b >= 0) & (tc - b < len(temperature))):
            raise InsufficientHistoryError(b, f"insufficient history for temperature lag {b}")

    rows = lagged_rows(power, temperature, lags, tc)
    complete = np.all(np.isfinite(rows), axis=1)
    rows = rows[complete]
    if rows.shape[0] == 0:
        raise DataError(f"no complete {cluster} rows for step {j}")
    U = np.column_stack([rank_transform(rows[:, c]) for c in range(rows.shape[1])])
    columns = [RankColumn.from_values(rows[:, c]) for c in range(rows.shape[1])]
    return DesignMatrix(
        U=U,
        columns=columns,
        step=j,
        cluster=cluster,
        days=day_idx[candidates][complete],
        lags=lags,
        physical=rows,
        dropped=int(np.sum(~complete)),
    )


def step_time(day: date, j: int, tzinfo=None) -> datetime:
    """Start timestamp of step ``j`` on ``day``."""
    return datetime.combine(day, time(0), tzinfo=tzinfo) + j * STEP_15
