"""Synthetic 15-minute demand and temperature series for tests and demos.

Demand = daily profile + weekly pattern + nonlinear heating load driven by
temperature + AR(1) noise whose scale changes over the day.
"""

from __future__ import annotations

from datetime import date, datetime, timezone

import numpy as np

from .data_io import STEP_15, TimeSeries
from .features import STEPS_PER_DAY

__all__ = ["synthetic_load", "synthetic_hierarchy"]


def synthetic_load(days: int = 120, seed: int = 0, start: date = date(2018, 1, 1),
                   base_kw: float = 400.0, ar_coef: float = 0.9, temperature=None):
    """Return ``(power, temperature)`` series covering ``days`` whole days.

    The temperature series plays the role of a perfect day-ahead forecast.
    Pass ``temperature`` (a :class:`TimeSeries`) to reuse the weather of
    another series; its values then drive the heating term.
    """
    rng = np.random.default_rng(seed)
    n = days * STEPS_PER_DAY
    t = np.arange(n)
    j = t % STEPS_PER_DAY
    day = t // STEPS_PER_DAY
    hour = j / 4.0
    weekday = (start.weekday() + day) % 7

    # Temperature: stationary around a winter mean, daily cycle, day-to-day
    # weather anomaly. No trend, so test days stay inside the historical range.
    anomaly = np.zeros(days)
    for d in range(1, days):
        anomaly[d] = 0.7 * anomaly[d - 1] + rng.normal(0.0, 2.5)
    temp = (
        6.0
        + 4.0 * np.sin(2 * np.pi * (hour - 9.0) / 24.0)
        + anomaly[day]
        + rng.normal(0.0, 0.3, n)
    )
    if temperature is not None:
        if len(temperature) < n:
            raise ValueError("temperature series is shorter than the requested days")
        temp = np.asarray(temperature.values[:n], dtype=float)

    # Daily profile: night trough, morning and evening peaks.
    profile = (
        0.75
        + 0.25 * np.sin(2 * np.pi * (hour - 7.0) / 24.0)
        + 0.20 * np.exp(-0.5 * ((hour - 8.0) / 1.2) ** 2)
        + 0.30 * np.exp(-0.5 * ((hour - 19.0) / 1.8) ** 2)
    )
    weekend = weekday >= 5
    weekly = np.where(weekend, 0.8, 1.0) * np.where(weekday == 0, 1.03, 1.0)
    # Weekend mornings start later.
    profile = np.where(weekend, profile - 0.12 * np.exp(-0.5 * ((hour - 7.5) / 1.5) ** 2), profile)
    heating = 3.0 * base_kw / 400.0 * np.maximum(0.0, 14.0 - temp) ** 1.5

    # Heteroscedastic AR(1): calm nights, noisy daytime.
    scale = base_kw / 400.0 * (6.0 + 14.0 * np.exp(-0.5 * ((hour - 14.0) / 4.0) ** 2))
    eps = rng.standard_normal(n)
    noise = np.empty(n)
    noise[0] = eps[0]
    for i in range(1, n):
        noise[i] = ar_coef * noise[i - 1] + np.sqrt(1 - ar_coef ** 2) * eps[i]

    power = base_kw * profile * weekly + heating + scale * noise
    t0 = datetime(start.year, start.month, start.day, tzinfo=timezone.utc)
    return (TimeSeries(t0, power, STEP_15, "kW"), TimeSeries(t0, temp, STEP_15, "degC"))


def synthetic_hierarchy(days: int = 60, seed: int = 0, start: date = date(2018, 1, 1)):
    """Four-level metering tree whose leaves are independent synthetic loads.

    ``root`` feeds two substations ``S1`` and ``S2``; each feeds two cabinets
    (``S11`` ...) with two meters each (``S111`` ...). Parents are the exact
    sums of their children.

    Returns
    -------
    hierarchy : :class:`~ecplf.data_io.MeterHierarchy`
    power : dict
        Node name to :class:`TimeSeries`, for every node.
    temperature : :class:`TimeSeries`
    """
    from .data_io import MeterHierarchy

    children = {"root": ["S1", "S2"]}
    for a in (1, 2):
        children[f"S{a}"] = [f"S{a}{b}" for b in (1, 2)]
        for b in (1, 2):
            children[f"S{a}{b}"] = [f"S{a}{b}{c}" for c in (1, 2)]
    hierarchy = MeterHierarchy("root", children)
    _, temperature = synthetic_load(days, seed=seed, start=start)
    seeds = np.random.SeedSequence(seed).spawn(len(hierarchy.leaves))
    power = {}
    for k, (leaf, ss) in enumerate(zip(hierarchy.leaves, seeds)):
        leaf_seed = int(ss.generate_state(1)[0])
        power[leaf] = synthetic_load(days, seed=leaf_seed, start=start, base_kw=30.0 + 5.0 * k,
                                     temperature=temperature)[0]

    def total(node):
        if node not in power:
            parts = [total(c) for c in children[node]]
            power[node] = TimeSeries(parts[0].start, np.sum([p.values for p in parts], axis=0), STEP_15, "kW")
        return power[node]

    total("root")
    return hierarchy, power, temperature
