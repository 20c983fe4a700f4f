"""Command-line front end.

Every command reads a JSON run configuration (``--config``). Relative paths
inside it are resolved against the directory of the configuration file. A
run manifest written next to the outputs embeds the effective configuration
with absolute paths, so ``--config manifest.json`` repeats a run exactly.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time as _time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date, time, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import (
    BandwidthConfig,
    load_bandwidths,
    optimize_ql,
    rule_of_thumb_for_data,
    save_bandwidths,
)
from .data_io import (
    STEP_10,
    aggregation_study,
    downsample_10_to_15,
    load_csv,
    load_hierarchy,
    read_forecast_csv,
    validate_hierarchy,
    write_csv,
    write_forecast_csv,
)
from .exceptions import ConfigError, DataError, NumericalError
from .features import Calendar, LagSpec, load_calendar
from .forecasting import DayAheadProblem, ForecastConfig, LoadHistory
from .metrics import QUANTILE_LEVELS, average_reports, evaluate, write_report_csv, write_report_kv
from .qr_baseline import fit_qr_model, predict_day, training_rows

logger = logging.getLogger("ecplf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
LOCK_NAME = ".ecplf.lock"
METHOD_FLAGS = {"ise": "ise", "ql": "ql", "rot": "rule_of_thumb"}

#: Copula variants compared by ``benchmark``: (label, power lags, method).
BENCHMARK_MODELS = (
    ("EC ISE-optimized", (672,), "ise"),
    ("EC QL-optimized 1", (672,), "ql"),
    ("EC QL-optimized 2", (1, 12, 24, 96, 672), "ql"),
    ("EC Rule-of-thumb optimized 1", (672,), "rule_of_thumb"),
    ("EC Rule-of-thumb optimized 2", (1, 12, 24, 96, 672), "rule_of_thumb"),
)


# -- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    """Effective settings of one command invocation."""

    power: Path | None = None
    temperature: Path | None = None
    calendar: Path | None = None
    region: str | None = None
    hierarchy: Path | None = None
    meters: dict = field(default_factory=dict)
    input_step_minutes: int = 15
    power_lags: tuple = (672,)
    temperature_lags: tuple = (0,)
    grid_size: int = 100
    scenarios: int = 50
    cutoff: str = "10:00"
    seed: int | None = None
    workers: int = 1
    method: str = "ise"
    initial_guess: float = 0.01
    bounds: tuple = (1e-4, 10.0)
    restarts: int = 3
    ise_restarts: int = 8
    max_iterations: int = 200
    bandwidth_files: dict = field(default_factory=dict)
    training_start: str | None = None
    test_start: str | None = None
    test_days: int = 7
    aggregation_samples: int = 10_000
    out: Path = Path("out")

    _PATHS = ("power", "temperature", "calendar", "hierarchy", "out")

    @classmethod
    def from_dict(cls, doc: dict, base: Path) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kw = dict(doc)
        for key in cls._PATHS:
            if kw.get(key) is not None:
                kw[key] = (base / kw[key]).resolve()
        kw["meters"] = {str(k): (base / v).resolve() for k, v in kw.get("meters", {}).items()}
        kw["bandwidth_files"] = {str(k): (base / v).resolve() for k, v in kw.get("bandwidth_files", {}).items()}
        for key in ("power_lags", "temperature_lags", "bounds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.method = METHOD_FLAGS.get(cfg.method, cfg.method)
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for key in self.__dataclass_fields__:
            if key.startswith("_"):
                continue
            v = getattr(self, key)
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, dict):
                v = {k: str(p) for k, p in sorted(v.items())}
            elif isinstance(v, tuple):
                v = list(v)
            out[key] = v
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # Derived objects ---------------------------------------------------------

    def cutoff_time(self) -> time:
        try:
            return time.fromisoformat(self.cutoff)
        except ValueError as exc:
            raise ConfigError(f"bad cutoff time {self.cutoff!r}") from exc

    def lag_spec(self, power_lags=None) -> LagSpec:
        return LagSpec(tuple(power_lags or self.power_lags), tuple(self.temperature_lags))

    def bandwidth_config(self, method=None) -> BandwidthConfig:
        return BandwidthConfig(
            method=method or self.method,
            initial_guess=self.initial_guess,
            bounds=self.bounds,
            max_iterations=self.max_iterations,
            restarts=self.restarts,
            ise_restarts=self.ise_restarts,
            seed=self.seed or 0,
        )

    def forecast_config(self, power_lags=None, method=None, weekday_bandwidths=None) -> ForecastConfig:
        return ForecastConfig(
            lags=self.lag_spec(power_lags),
            grid_size=self.grid_size,
            scenarios=self.scenarios,
            cutoff=self.cutoff_time(),
            seed=self.require_seed(),
            workers=self.workers,
            bandwidth=self.bandwidth_config(method),
            weekday_bandwidths=weekday_bandwidths,
        )

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        return int(self.seed)

    def require(self, *keys) -> None:
        for key in keys:
            if getattr(self, key) in (None, {}, ()):
                raise ConfigError(f"configuration needs '{key}'")

    def check_files(self) -> None:
        paths = [getattr(self, k) for k in ("power", "temperature", "calendar", "hierarchy")]
        paths += list(self.meters.values()) + list(self.bandwidth_files.values())
        missing = [str(p) for p in paths if p is not None and not Path(p).is_file()]
        if missing:
            raise ConfigError(f"missing input files: {missing}")

    def input_hashes(self) -> dict:
        paths = [getattr(self, k) for k in ("power", "temperature", "calendar", "hierarchy")]
        paths += list(self.meters.values()) + list(self.bandwidth_files.values())
        return {str(p): _sha256(p) for p in sorted({Path(p) for p in paths if p is not None})}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path, overrides: dict | None = None) -> tuple:
    """Read a configuration or a manifest; returns ``(RunConfig, manifest_args)``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    args = {}
    if isinstance(doc, dict) and "config" in doc and "config_sha256" in doc:
        args = doc.get("arguments", {})
        doc = doc["config"]
    cfg = RunConfig.from_dict(doc, path.parent)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.method = METHOD_FLAGS.get(cfg.method, cfg.method)
    return cfg, args


# -- shared plumbing ------------------------------------------------------------


@contextmanager
def output_lock(out: Path):
    """Exclusive lock file so that two commands never share an output directory."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise ConfigError(f"output directory {out} is locked by another run ({lock})") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def read_series(path, cfg: RunConfig, unit=""):
    series = load_csv(path, cfg.input_step_minutes, unit)
    if series.step == STEP_10:
        series = downsample_10_to_15(series)
    return series


def load_history(cfg: RunConfig, power_path=None) -> LoadHistory:
    cfg.require("temperature")
    power_path = power_path or cfg.power
    if power_path is None:
        raise ConfigError("configuration needs 'power'")
    power = read_series(power_path, cfg, "kW")
    temperature = read_series(cfg.temperature, cfg, "degC")
    return LoadHistory(power, temperature, load_calendar_cfg(cfg))


def load_calendar_cfg(cfg: RunConfig) -> Calendar:
    return load_calendar(cfg.calendar, cfg.region) if cfg.calendar else Calendar()


def parse_date(text) -> date:
    try:
        return date.fromisoformat(str(text))
    except ValueError as exc:
        raise ConfigError(f"bad date {text!r}; expected YYYY-MM-DD") from exc


def day_range(first: date, n: int) -> list:
    if n < 1:
        raise ConfigError("--days must be >= 1")
    return [first + timedelta(days=i) for i in range(n)]


def write_manifest(path: Path, cfg: RunConfig, command: str, arguments: dict, started: float, **extra) -> None:
    doc = {
        "ecplf_version": __version__,
        "command": command,
        "arguments": arguments,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "inputs": cfg.input_hashes(),
        "wall_time_s": round(_time.perf_counter() - started, 3),
    }
    doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (date, Path)):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def weekday_table(cfg: RunConfig, key: str, lags: LagSpec):
    """QL bandwidths for a variant, read from ``bandwidth_files[key]``."""
    path = cfg.bandwidth_files.get(key)
    if path is None:
        raise ConfigError(f"QL bandwidths needed: set bandwidth_files.{key} (see optimize-bandwidth)")
    table = load_bandwidths(path)
    for name, h in table.items():
        if h.size != lags.D:
            raise ConfigError(f"{path}: [{name}] has {h.size} bandwidths, lags need {lags.D}")
    return table


def ql_key(power_lags) -> str:
    return "ql" if tuple(power_lags) == (672,) else "ql_" + "_".join(str(a) for a in power_lags)


def run_forecast(history: LoadHistory, day: date, fcfg: ForecastConfig):
    """Forecast one day; returns ``(CombinedForecast, bandwidths used)``."""
    problem = DayAheadProblem(history, day, fcfg)
    h = problem.select_bandwidth()
    fc = problem.forecast(h)
    if h is None:
        used = {"rule_of_thumb_per_step": True,
                "first_step": problem.step_bandwidth(problem.first_reported, None)}
    else:
        used = np.asarray(h)
    return fc, used


# -- commands -------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args) -> dict:
    """Validate and resample raw series into 15-minute CSV files under ``out``."""
    sources = dict(cfg.meters)
    if cfg.power:
        sources.setdefault("power", cfg.power)
    if cfg.temperature:
        sources["temperature"] = cfg.temperature
    if not sources:
        raise ConfigError("nothing to ingest: set power, temperature or meters")
    series, summary = {}, {}
    for name, path in sorted(sources.items()):
        s = read_series(path, cfg)
        series[name] = s
        target = cfg.out / f"{name}.csv"
        write_csv(s, target)
        summary[name] = {"source": str(path), "output": str(target), "steps": len(s), "gaps": s.n_gaps,
                         "start": s.start.isoformat()}
        print(f"{name}: {len(s)} steps from {s.start.isoformat()}, {s.n_gaps} gaps -> {target}")
    deviations = {}
    if cfg.hierarchy:
        deviations = validate_hierarchy(load_hierarchy(cfg.hierarchy), series)
        for node, dev in sorted(deviations.items()):
            print(f"hierarchy check {node}: {dev:.4%} deviation from the sum of children")
    return {"series": summary, "hierarchy_deviation": deviations}


def cmd_forecast(cfg: RunConfig, args) -> dict:
    day = parse_date(args.date)
    history = load_history(cfg)
    weekday_bw = None
    if cfg.method == "ql":
        weekday_bw = weekday_table(cfg, ql_key(cfg.power_lags), cfg.lag_spec())
    fcfg = cfg.forecast_config(weekday_bandwidths=weekday_bw)
    fc, used = run_forecast(history, day, fcfg)
    target = cfg.out / f"forecast_{day.isoformat()}.csv"
    write_forecast_csv(fc.to_quantile_forecast(QUANTILE_LEVELS), target)
    print(f"wrote {target}")
    return {"outputs": [str(target)], "bandwidths": used, "method": cfg.method}


def _forecast_days(table) -> dict:
    by_day = {}
    for i, ts in enumerate(table.timestamps):
        by_day.setdefault(ts.date(), []).append(i)
    return by_day


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    if not args.forecast:
        raise ConfigError("evaluate needs --forecast FILE [FILE ...]")
    realized_path = Path(args.realized) if args.realized else cfg.power
    if realized_path is None:
        raise ConfigError("evaluate needs --realized FILE or 'power' in the configuration")
    realized = read_series(realized_path, cfg, "kW")
    reports = []
    for path in args.forecast:
        table = read_forecast_csv(path)
        for day, rows in sorted(_forecast_days(table).items()):
            y = np.array([realized.values[realized.index_of(table.timestamps[i])] for i in rows])
            label = day.isoformat() if len(args.forecast) == 1 else f"{Path(path).name}:{day.isoformat()}"
            reports.append(evaluate(table.quantiles[rows], y, table.alphas, label=label))
    reports.append(average_reports(reports, label="mean"))
    write_report_csv(reports, cfg.out / "evaluation.csv")
    write_report_kv(reports, cfg.out / "evaluation.txt")
    _print_reports(reports)
    return {"outputs": [str(cfg.out / "evaluation.csv"), str(cfg.out / "evaluation.txt")]}


def _print_reports(reports) -> None:
    rows = [r.as_row() for r in reports]
    keys = list(rows[0])
    width = max(len(str(r["label"])) for r in rows) + 2
    print("".join([keys[0].ljust(width)] + [k.rjust(13) for k in keys[1:]]))
    for row in rows:
        print("".join([str(row["label"]).ljust(width)] + [f"{row[k]:13.4f}" for k in keys[1:]]))


def cmd_benchmark(cfg: RunConfig, args) -> dict:
    first = parse_date(args.date or cfg.test_start)
    days = day_range(first, args.days or cfg.test_days)
    history = load_history(cfg)
    names = [_short(label) for label, _, _ in BENCHMARK_MODELS] + ["qr"]
    wanted = set(names)
    if args.models:
        wanted = {m.strip().lower() for m in args.models.split(",")}
        if wanted - set(names):
            raise ConfigError(f"unknown models {sorted(wanted - set(names))}; choose among {names}")
    results, bandwidths = [], {}
    for label, power_lags, method in BENCHMARK_MODELS:
        if _short(label) not in wanted:
            continue
        lags = cfg.lag_spec(power_lags)
        weekday_bw = weekday_table(cfg, ql_key(power_lags), lags) if method == "ql" else None
        fcfg = cfg.forecast_config(power_lags, method, weekday_bw)
        reports = []
        for day in days:
            fc, used = run_forecast(history, day, fcfg)
            bandwidths[f"{label} {day.isoformat()}"] = used
            reports.append(evaluate(fc.quantile_table(QUANTILE_LEVELS), history.realized(day)))
            logger.info("%s %s QL %.3f", label, day, reports[-1].avg_ql)
        results.append(average_reports(reports, label=label))
    if "qr" in wanted:
        end = history.day_index(days[0]) * 96
        model = fit_qr_model(training_rows(history.power, history.temperature, history.calendar, end))
        reports = [evaluate(predict_day(model, history.power, history.temperature, history.calendar, d),
                            history.realized(d)) for d in days]
        results.append(average_reports(reports, label="QR"))
    write_report_csv(results, cfg.out / "benchmark.csv")
    write_report_kv(results, cfg.out / "benchmark.txt")
    _print_reports(results)
    return {"outputs": [str(cfg.out / "benchmark.csv")], "bandwidths": bandwidths,
            "days": [d.isoformat() for d in days]}


def _short(label: str) -> str:
    """``EC QL-optimized 2`` -> ``ql2``; ``EC ISE-optimized`` -> ``ise``."""
    name = label.split(" ", 1)[1].lower()
    base = {"ise": "ise", "ql": "ql", "rule": "rot"}[name.split("-")[0]]
    return base + (name[-1] if name[-1].isdigit() else "")


def cmd_optimize_bandwidth(cfg: RunConfig, args) -> dict:
    history = load_history(cfg)
    lags = cfg.lag_spec()
    method = cfg.method
    if method == "ql":
        start = parse_date(args.date or cfg.training_start)
        fits = optimize_ql(history, day_range(start, 7), cfg.forecast_config(method="ql"),
                           cfg.bandwidth_config("ql"))
        target = cfg.out / f"bandwidths_{ql_key(lags.power_lags)}.ini"
    else:
        day = parse_date(args.date or cfg.test_start)
        problem = DayAheadProblem(history, day, cfg.forecast_config(method=method))
        if method == "ise":
            problem.select_bandwidth()
            fits = {day.isoformat(): problem.ise_fit}
        else:
            t = problem.ise_reference_step()
            fits = {day.isoformat(): rule_of_thumb_for_data(problem.matrix(t).U)}
        target = cfg.out / f"bandwidths_{method}.ini"
    save_bandwidths(target, fits, method)
    for key, fit in fits.items():
        h = getattr(fit, "h", fit)
        print(f"{key}: h = {np.array2string(np.asarray(h), precision=6)}")
    return {"outputs": [str(target)],
            "bandwidths": {k: np.asarray(getattr(f, "h", f)) for k, f in fits.items()}}


def cmd_aggregate_study(cfg: RunConfig, args) -> dict:
    cfg.require("hierarchy", "meters", "temperature")
    hierarchy = load_hierarchy(cfg.hierarchy)
    first = parse_date(args.date or cfg.test_start)
    days = day_range(first, args.days or cfg.test_days)
    power = {name: read_series(path, cfg, "kW") for name, path in cfg.meters.items()}
    if hierarchy.root not in power and cfg.power:
        power[hierarchy.root] = read_series(cfg.power, cfg, "kW")
    temperature = read_series(cfg.temperature, cfg, "degC")
    levels = None
    if args.level:
        levels = [_parse_level(args.level, hierarchy.n_levels)]
    results = aggregation_study(hierarchy, power, temperature, load_calendar_cfg(cfg), days,
                                cfg.forecast_config(), levels, cfg.aggregation_samples)
    reports = [r for _, r, _ in results]
    write_report_csv(reports, cfg.out / "aggregation.csv")
    write_report_kv(reports, cfg.out / "aggregation.txt")
    _print_reports(reports)
    return {"outputs": [str(cfg.out / "aggregation.csv")],
            "node_seeds": {f"L{level}": seeds for level, _, seeds in results},
            "days": [d.isoformat() for d in days]}


def _parse_level(text: str, n_levels: int) -> int:
    s = text.strip().upper()
    if not (s.startswith("L") and s[1:].isdigit()) or not 1 <= int(s[1:]) <= n_levels:
        raise ConfigError(f"--level must be one of L1..L{n_levels}")
    return int(s[1:])


COMMANDS = {
    "ingest": cmd_ingest,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "optimize-bandwidth": cmd_optimize_bandwidth,
    "aggregate-study": cmd_aggregate_study,
}
SEEDED = {"forecast", "benchmark", "aggregate-study", "optimize-bandwidth"}


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration or a run manifest")
    common.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
    common.add_argument("--out", help="output directory (overrides the configuration)")
    common.add_argument("--workers", type=int, help="scenario threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ecplf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="resample and validate raw series")

    p = sub.add_parser("forecast", parents=[common], help="day-ahead quantile forecast")
    p.add_argument("--date", help="target day YYYY-MM-DD")
    p.add_argument("--method", choices=sorted(METHOD_FLAGS))

    p = sub.add_parser("evaluate", parents=[common], help="score forecast tables")
    p.add_argument("--forecast", nargs="+", help="forecast CSV files")
    p.add_argument("--realized", help="realised demand CSV (defaults to the configured power)")

    p = sub.add_parser("benchmark", parents=[common], help="copula variants against quantile regression")
    p.add_argument("--date", help="first test day")
    p.add_argument("--days", type=int, help="number of test days")
    p.add_argument("--models", help="comma list among ise,ql1,ql2,rot1,rot2,qr (default: all)")

    p = sub.add_parser("optimize-bandwidth", parents=[common], help="select and store bandwidths")
    p.add_argument("--date", help="forecast day (ise, rot) or first training day (ql)")
    p.add_argument("--method", choices=sorted(METHOD_FLAGS))

    p = sub.add_parser("aggregate-study", parents=[common], help="forecast quality per aggregation level")
    p.add_argument("--date", help="first test day")
    p.add_argument("--days", type=int, help="number of test days")
    p.add_argument("--level", help="single level L1..Ln (default: all)")
    return parser


def _arguments(args) -> dict:
    keep = ("date", "days", "models", "level", "forecast", "realized")
    return {k: getattr(args, k) for k in keep if getattr(args, k, None) is not None}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _time.perf_counter()
    try:
        overrides = {
            "seed": args.seed,
            "workers": args.workers,
            "method": METHOD_FLAGS.get(getattr(args, "method", None) or "", None),
        }
        if args.out:
            overrides["out"] = Path(args.out).resolve()
        cfg, saved = load_config(args.config, overrides)
        for key, value in saved.items():
            if getattr(args, key, None) is None and hasattr(args, key):
                setattr(args, key, value)
        if args.command == "forecast" and not args.date:
            raise ConfigError("forecast needs --date")
        if args.command in SEEDED:
            cfg.require_seed()
        cfg.check_files()
        with output_lock(cfg.out):
            extra = COMMANDS[args.command](cfg, args)
            name = args.command.replace("-", "_")
            suffix = f"_{args.date}" if getattr(args, "date", None) else ""
            write_manifest(cfg.out / f"manifest_{name}{suffix}.json", cfg, args.command, _arguments(args),
                           started, **extra)
    except ConfigError as exc:
        print(f"ecplf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"ecplf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, ValueError) as exc:
        print(f"ecplf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
