"""Series ingestion, resampling, meter hierarchies and forecast aggregation."""

from __future__ import annotations

import csv
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .metrics import QUANTILE_LEVELS

__all__ = [
    "TimeSeries",
    "QuantileForecast",
    "parse_timestamp",
    "load_csv",
    "write_csv",
    "downsample_10_to_15",
    "write_forecast_csv",
    "read_forecast_csv",
    "MeterHierarchy",
    "load_hierarchy",
    "validate_hierarchy",
    "aggregate_forecasts",
    "aggregation_study",
    "node_seed",
]

STEP_15 = timedelta(minutes=15)
STEP_10 = timedelta(minutes=10)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"unparseable timestamp {text!r}") from exc


@dataclass
class TimeSeries:
    """Uniformly spaced values; gaps are NaN, never skipped."""

    start: datetime
    values: np.ndarray
    step: timedelta = STEP_15
    unit: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.step <= timedelta(0):
            raise DataError("series step must be positive")

    def __len__(self):
        return self.values.size

    @property
    def end(self) -> datetime:
        """Timestamp one step past the last value."""
        return self.start + len(self) * self.step

    def timestamp(self, index: int) -> datetime:
        return self.start + index * self.step

    def timestamps(self) -> list:
        return [self.timestamp(i) for i in range(len(self))]

    def index_of(self, ts: datetime) -> int:
        offset = ts - self.start
        n, rem = divmod(offset, self.step)
        if rem:
            raise DataError(f"timestamp {ts.isoformat()} is not on the series grid")
        return int(n)

    def steps_per_day(self) -> int:
        n, rem = divmod(timedelta(days=1), self.step)
        if rem:
            raise DataError("series step does not divide one day")
        return int(n)

    def copy(self) -> "TimeSeries":
        return TimeSeries(self.start, self.values.copy(), self.step, self.unit)

    @property
    def n_gaps(self) -> int:
        return int(np.sum(~np.isfinite(self.values)))


def load_csv(path, step_minutes: int = 15, unit: str = "") -> TimeSeries:
    """Read a ``timestamp,value`` file into a :class:`TimeSeries`.

    Missing rows become NaN gaps. Duplicate, out-of-order or off-grid
    timestamps are rejected.
    """
    step = timedelta(minutes=step_minutes)
    stamps, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["timestamp", "value"]:
            raise DataError(f"{path}: expected header 'timestamp,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields")
            stamps.append(parse_timestamp(row[0]))
            v = row[1].strip()
            vals.append(float(v) if v and v.lower() != "nan" else np.nan)
    if not stamps:
        raise DataError(f"{path}: no data rows")
    start = stamps[0]
    idx = []
    for ts in stamps:
        n, rem = divmod(ts - start, step)
        if rem:
            raise DataError(f"{path}: timestamp {ts.isoformat()} is off the {step_minutes}-min grid")
        idx.append(int(n))
    idx = np.asarray(idx)
    d = np.diff(idx)
    if np.any(d == 0):
        raise DataError(f"{path}: duplicate timestamp {stamps[int(np.flatnonzero(d == 0)[0]) + 1].isoformat()}")
    if np.any(d < 0):
        raise DataError(f"{path}: timestamps out of order")
    values = np.full(idx[-1] + 1, np.nan)
    values[idx] = vals
    return TimeSeries(start, values, step, unit)


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_csv(series: TimeSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "value"])
        for i, v in enumerate(series.values):
            writer.writerow([series.timestamp(i).isoformat(), _fmt(v)])


def downsample_10_to_15(series: TimeSeries) -> TimeSeries:
    """Time-weighted mean of 10-minute values over 15-minute windows.

    Each 30-minute block holds three source values ``v0, v1, v2`` and two
    target windows: ``(v0 + v1/2) / 1.5`` and ``(v1/2 + v2) / 1.5``. A gap in
    any contributing source value makes the window a gap. A trailing partial
    block is dropped.
    """
    if series.step != STEP_10:
        raise DataError("down-sampling expects a 10-minute series")
    s = series.start
    if s.minute % 30 or s.second or s.microsecond:
        raise DataError("10-minute series must start on a full or half hour")
    k = len(series) // 3
    blocks = series.values[: 3 * k].reshape(k, 3)
    first = (blocks[:, 0] + 0.5 * blocks[:, 1]) / 1.5
    second = (0.5 * blocks[:, 1] + blocks[:, 2]) / 1.5
    out = np.column_stack([first, second]).ravel()
    return TimeSeries(s, out, STEP_15, series.unit)


@dataclass
class QuantileForecast:
    """Quantile table in physical units, one row per reported step."""

    timestamps: list
    quantiles: np.ndarray
    expected: np.ndarray
    alphas: np.ndarray = field(default_factory=lambda: QUANTILE_LEVELS.copy())

    def __post_init__(self):
        self.quantiles = np.asarray(self.quantiles, dtype=float)
        self.expected = np.asarray(self.expected, dtype=float)
        H = len(self.timestamps)
        if self.quantiles.shape != (H, len(self.alphas)) or self.expected.shape != (H,):
            raise DataError("quantile forecast shapes are inconsistent")

    @property
    def H(self) -> int:
        return len(self.timestamps)


def _qname(alpha) -> str:
    return f"q{round(alpha * 100):02d}"


def write_forecast_csv(forecast: QuantileForecast, path) -> None:
    """Columns ``timestamp, expected_value_kW, q01 ... q99``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "expected_value_kW"] + [_qname(a) for a in forecast.alphas])
        for ts, ev, row in zip(forecast.timestamps, forecast.expected, forecast.quantiles):
            writer.writerow([ts.isoformat(), f"{ev:.6f}"] + [f"{v:.6f}" for v in row])


def read_forecast_csv(path) -> QuantileForecast:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["timestamp", "expected_value_kW"]:
            raise DataError(f"{path}: not a forecast table")
        qcols = header[2:]
        try:
            alphas = np.array([int(c[1:]) / 100 for c in qcols])
        except ValueError as exc:
            raise DataError(f"{path}: bad quantile column names") from exc
        ts, ev, q = [], [], []
        for row in reader:
            if not row:
                continue
            ts.append(parse_timestamp(row[0]))
            ev.append(float(row[1]))
            q.append([float(v) for v in row[2:]])
    return QuantileForecast(ts, np.array(q).reshape(len(ts), alphas.size), np.array(ev), alphas)


@dataclass
class MeterHierarchy:
    """Radial metering tree. Levels count up from the meters (L1) to the root."""

    root: str
    children: dict

    def __post_init__(self):
        seen = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node in seen:
                raise ConfigError(f"hierarchy node {node!r} reachable twice")
            seen.add(node)
            stack.extend(self.children.get(node, ()))
        extra = set(self.children) - seen
        if extra:
            raise ConfigError(f"hierarchy nodes unreachable from root: {sorted(extra)}")
        self._nodes = seen

    @property
    def nodes(self) -> list:
        return sorted(self._nodes)

    def is_leaf(self, node) -> bool:
        return not self.children.get(node)

    @property
    def leaves(self) -> list:
        return sorted(n for n in self._nodes if self.is_leaf(n))

    def depth(self, node) -> int:
        d, frontier = 0, [self.root]
        while frontier:
            if node in frontier:
                return d
            frontier = [c for n in frontier for c in self.children.get(n, ())]
            d += 1
        raise ConfigError(f"unknown hierarchy node {node!r}")

    @property
    def height(self) -> int:
        return max(self.depth(n) for n in self._nodes)

    @property
    def n_levels(self) -> int:
        return self.height + 1

    def level_of(self, node) -> int:
        return self.n_levels - self.depth(node)

    def cut(self, level: int) -> list:
        """Nodes whose forecasts sum to the root at aggregation ``level``.

        Nodes exactly at that level plus any shallower leaves, so that
        unbalanced trees are still fully covered.
        """
        if not 1 <= level <= self.n_levels:
            raise ConfigError(f"level must be within 1..{self.n_levels}")
        depth = self.n_levels - level
        out = [n for n in self._nodes if self.depth(n) == depth]
        out += [n for n in self._nodes if self.depth(n) < depth and self.is_leaf(n)]
        return sorted(out)


def load_hierarchy(path) -> MeterHierarchy:
    """JSON document ``{"root": name, "children": {node: [child, ...]}}``."""
    try:
        doc = json.loads(Path(path).read_text())
        return MeterHierarchy(doc["root"], {k: list(v) for k, v in doc.get("children", {}).items()})
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: invalid hierarchy document ({exc})") from exc


def validate_hierarchy(hierarchy: MeterHierarchy, series: dict, rtol: float = 0.005) -> dict:
    """Check that measured parents equal the sum of measured children.

    Returns the relative deviation ``sum|parent - sum(children)| / sum|parent|``
    per checked node and raises when one exceeds ``rtol``.
    """
    deviations = {}
    for node in hierarchy.nodes:
        kids = hierarchy.children.get(node, ())
        if not kids or node not in series or not all(k in series for k in kids):
            continue
        parent = series[node]
        total = np.zeros(len(parent))
        for k in kids:
            child = series[k]
            if child.start != parent.start or len(child) != len(parent):
                raise DataError(f"series of {k!r} is not aligned with {node!r}")
            total = total + child.values
        ok = np.isfinite(total) & np.isfinite(parent.values)
        denom = np.sum(np.abs(parent.values[ok]))
        dev = float(np.sum(np.abs(parent.values[ok] - total[ok])) / denom) if denom > 0 else 0.0
        deviations[node] = dev
        if dev > rtol:
            raise DataError(f"node {node!r} deviates {dev:.4%} from the sum of its children")
    return deviations


def node_seed(master_seed: int, name: str) -> int:
    """Stable per-node seed derived from the master seed and the node name."""
    return int(np.random.SeedSequence([master_seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def aggregate_forecasts(children, n_samples: int = 10_000, seed: int = 0, alphas=QUANTILE_LEVELS):
    """Distribution of the sum of independent child forecasts.

    Parameters
    ----------
    children : sequence of sequences
        ``children[c][j]`` is the step-``j`` distribution of child ``c``; it
        must provide ``sample(rng, n)`` returning ``n`` physical values.
    n_samples : int
        Monte Carlo draws per step.
    seed : int
        Master seed; child ``c`` uses its own spawned stream.

    Returns
    -------
    quantiles : ndarray (H, len(alphas))
    expected : ndarray (H,)
    """
    children = [list(c) for c in children]
    if not children:
        raise DataError("no forecasts to aggregate")
    H = len(children[0])
    if any(len(c) != H for c in children):
        raise DataError("child forecasts cover different steps")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(children))]
    a = np.asarray(alphas, dtype=float)
    quantiles = np.empty((H, a.size))
    expected = np.empty(H)
    for j in range(H):
        total = np.zeros(n_samples)
        for child, rng in zip(children, streams):
            total += np.asarray(child[j].sample(rng, n_samples), dtype=float)
        quantiles[j] = np.quantile(total, a)
        expected[j] = total.mean()
    return quantiles, expected


def aggregation_study(hierarchy: MeterHierarchy, power: dict, temperature, calendar, dates, config,
                      levels=None, n_samples: int = 10_000):
    """Forecast every node of each aggregation level, sum to the root and score.

    ``power`` maps node names to their :class:`TimeSeries`; ``config`` is a
    :class:`~ecplf.forecasting.ForecastConfig`. The root level is scored on its
    own forecast without any sampling.

    Returns a list of ``(level, EvaluationReport, seeds)`` tuples where
    ``seeds`` maps node name to the seed used for it.
    """
    from .forecasting import LoadHistory, day_ahead_forecast
    from .metrics import average_reports, evaluate

    root = hierarchy.root
    if root not in power:
        raise DataError(f"no series for hierarchy root {root!r}")
    top = hierarchy.n_levels
    levels = list(levels) if levels is not None else list(range(1, top + 1))
    results = []
    cache = {}

    def node_forecast(node, date):
        key = (node, date)
        if key not in cache:
            if node not in power:
                raise DataError(f"no series for hierarchy node {node!r}")
            history = LoadHistory(power[node], temperature, calendar)
            cfg = config.with_seed(node_seed(config.seed, node))
            cache[key] = day_ahead_forecast(history, date, cfg)
        return cache[key]

    # Node forecasts are independent (each has its own seed), so they can be
    # computed concurrently; the cache makes the study itself order-free.
    needed = sorted({(n, d) for level in levels for n in (hierarchy.cut(level) if level != top else [root])
                     for d in dates})
    if config.workers > 1 and len(needed) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(lambda key: node_forecast(*key), needed))
    for level in levels:
        nodes = hierarchy.cut(level)
        seeds = {n: node_seed(config.seed, n) for n in nodes}
        reports = []
        for date in dates:
            root_hist = LoadHistory(power[root], temperature, calendar)
            realized = root_hist.realized(date)
            if level == top:
                table = node_forecast(root, date).quantile_table(QUANTILE_LEVELS)
            else:
                fcs = [node_forecast(n, date) for n in nodes]
                table, _ = aggregate_forecasts(
                    [f.distributions for f in fcs],
                    n_samples=n_samples,
                    seed=node_seed(config.seed, f"aggregate-L{level}-{date.isoformat()}"),
                )
            reports.append(evaluate(table, realized, label=f"L{level} {date.isoformat()}"))
        results.append((level, average_reports(reports, label=f"L{level}"), seeds))
    return results
