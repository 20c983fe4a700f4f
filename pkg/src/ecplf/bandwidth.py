"""Bandwidth selection for the beta-kernel copula density.

Three selectors are provided:

* :func:`rule_of_thumb` -- closed-form multivariate normal-reference rule;
* :func:`ise_objective` / :func:`optimize_ise` -- leave-one-out cross
  validation of the integrated squared error of the conditional density;
  needs no realisation of the forecast day, so it runs at forecast time;
* :func:`ql_objective` / :func:`optimize_ql` -- total pinball loss of full
  forecasts on past days, one bandwidth vector per weekday.
"""

from __future__ import annotations

import configparser
import logging
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .exceptions import ConfigError, DataError
from .kernel import (
    DEFAULT_GRID_SIZE,
    ConditionalDensityEstimator,
    as_bandwidths,
    as_copula_data,
    log_beta_kernel,
)
from .metrics import QUANTILE_LEVELS, total_ql

__all__ = [
    "METHODS",
    "WEEKDAYS",
    "BandwidthConfig",
    "BandwidthFit",
    "rule_of_thumb",
    "rule_of_thumb_for_data",
    "ise_objective",
    "minimize_bandwidth",
    "optimize_ise",
    "ql_objective",
    "optimize_ql",
    "save_bandwidths",
    "load_bandwidths",
]

logger = logging.getLogger(__name__)

METHODS = ("ise", "rule_of_thumb", "ql")
WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

#: Nominal standard deviation of a rank-transformed column (sqrt(1/12)).
RANK_SIGMA = 0.29


@dataclass(frozen=True)
class BandwidthConfig:
    method: str = "ise"
    initial_guess: float = 0.01
    bounds: tuple = (1e-4, 10.0)
    max_iterations: int = 200
    restarts: int = 3
    #: The ISE surface has several basins; more starts are affordable there.
    ise_restarts: int = 8
    seed: int = 0
    rel_step: float = 1e-6

    def __post_init__(self):
        method = {"rot": "rule_of_thumb"}.get(self.method, self.method)
        if method not in METHODS:
            raise ConfigError(f"unknown bandwidth method {self.method!r}")
        object.__setattr__(self, "method", method)
        lo, hi = (float(b) for b in self.bounds)
        object.__setattr__(self, "bounds", (lo, hi))
        if not 0 < lo < self.initial_guess < hi:
            raise ConfigError("bandwidth bounds must satisfy 0 < lower < initial_guess < upper")
        if min(self.restarts, self.ise_restarts, self.max_iterations) < 1:
            raise ConfigError("restarts and max_iterations must be >= 1")


@dataclass
class BandwidthFit:
    """Outcome of a bandwidth search."""

    h: np.ndarray
    objective: float
    initial_objective: float
    success: bool = True
    message: str = ""
    history: list = field(default_factory=list, repr=False)


def rule_of_thumb(D: int, m: int, sigma=RANK_SIGMA) -> np.ndarray:
    """``h_j = (4/(D+2))^(1/(D+4)) * m^(-1/(D+4)) * sigma_j``.

    >>> float(rule_of_thumb(2, 64)[0])
    0.145
    """
    if D < 1 or m < 1:
        raise ValueError("rule of thumb needs D >= 1 and m >= 1")
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (D,)).copy()
    return (4.0 / (D + 2)) ** (1.0 / (D + 4)) * m ** (-1.0 / (D + 4)) * s


def rule_of_thumb_for_data(data) -> np.ndarray:
    """Rule of thumb with each sigma taken from the sample std of the ranks."""
    U = as_copula_data(data)
    m, D = U.shape
    sigma = U.std(axis=0, ddof=1) if m > 1 else np.full(D, RANK_SIGMA)
    return rule_of_thumb(D, m, sigma)


def _richardson(fine, coarse):
    """Combine midpoint sums on a grid and on its 3x refinement (error O(L^-4))."""
    return (9.0 * fine - coarse) / 8.0


def ise_objective(h, data, conditioning=(), L: int = DEFAULT_GRID_SIZE) -> float:
    """Cross-validated ISE of the conditional density of column 0.

    ``int c(u|conditioning)^2 du - (2/m) sum_i c_{-i}(U_i1 | U_i2, ..., U_iD)``

    Integrals use the midpoint rule on the ``L`` grid, sharpened by
    Richardson extrapolation against the nested ``3L`` midpoint grid (which
    contains every point of the ``L`` grid). Each leave-one-out density is
    normalised by such an integral and then evaluated exactly at the
    held-out rank.
    """
    U = as_copula_data(data)
    m, D = U.shape
    if m < 2:
        raise DataError("leave-one-out requires m >= 2")
    hh = as_bandwidths(h, D)
    est = ConditionalDensityEstimator(U, hh, 3 * L)
    K = est._target
    coarse = slice(1, None, 3)

    w = est.log_weights(conditioning)
    if est.underflows(w):
        w = np.zeros(m)
    acc = logsumexp(K + w[None, :], axis=1)
    a = np.exp(acc - acc.max())
    mass = _richardson(a.mean(), a[coarse].mean())
    first = _richardson(np.mean(a ** 2), np.mean(a[coarse] ** 2)) / mass ** 2

    # W[i, k]: log conditioning-kernel weight of sample k when evaluating at row i.
    W = np.zeros((m, m))
    for j in range(1, D):
        W += log_beta_kernel(U[:, j], U[:, j], hh[j])
    # Target kernel of sample k evaluated at the held-out rank of row i.
    T = log_beta_kernel(U[:, 0], U[:, 0], hh[0])
    # Log integral over u of each sample's target kernel: the per-sample normaliser.
    g_fine = logsumexp(K, axis=0) - np.log(3 * L)
    g_coarse = logsumexp(K[coarse], axis=0) - np.log(L)
    G = g_fine + np.log(_richardson(1.0, np.exp(g_coarse - g_fine)))
    np.fill_diagonal(W, -np.inf)
    log_num = logsumexp(T + W, axis=1)
    log_den = logsumexp(W + G[None, :], axis=1)
    second = 2.0 / m * float(np.sum(np.exp(log_num - log_den)))
    return float(first - second)


def _restart_points(D, config: BandwidthConfig, restarts: int):
    lo, hi = config.bounds
    rng = np.random.default_rng(config.seed)
    points = [np.full(D, config.initial_guess)]
    for _ in range(restarts - 1):
        p = config.initial_guess * 10.0 ** rng.uniform(-1.0, 2.0, size=D)
        points.append(np.clip(p, lo, hi))
    return points


def minimize_bandwidth(objective, D: int, config: BandwidthConfig, restarts: int = 1) -> BandwidthFit:
    """Bounded L-BFGS-B with finite-difference gradients, best of ``restarts``.

    The first start is ``initial_guess`` in every coordinate. The result is
    never worse than that start; ties go to the lexicographically smaller
    ``h``.
    """
    lo, hi = config.bounds
    starts = _restart_points(D, config, restarts)

    def f(x):
        v = objective(np.clip(x, lo, hi))
        return float(v) if np.isfinite(v) else 1e300

    h0 = starts[0]
    f0 = f(h0)
    best = BandwidthFit(h0.copy(), f0, f0, success=False, message="initial guess")
    candidates = []
    for x0 in starts:
        try:
            res = minimize(
                f,
                x0,
                method="L-BFGS-B",
                jac="2-point",
                bounds=[(lo, hi)] * D,
                options={"maxiter": config.max_iterations, "finite_diff_rel_step": config.rel_step},
            )
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("bandwidth optimisation failed from %s: %s", x0, exc)
            continue
        x = np.clip(res.x, lo, hi)
        fx = f(x)
        candidates.append((fx, tuple(x), res))
        best.history.append((x0.copy(), x.copy(), fx))
    if not candidates:
        warnings.warn("bandwidth optimisation failed; using the initial guess", RuntimeWarning, stacklevel=2)
        return best
    fx, x, res = min(candidates, key=lambda c: (c[0], c[1]))
    if fx <= f0:
        best.h = np.array(x)
        best.objective = fx
        best.success = bool(res.success)
        best.message = str(res.message)
    else:
        warnings.warn("bandwidth optimisation did not improve on the initial guess", RuntimeWarning,
                      stacklevel=2)
    return best


def optimize_ise(data, conditioning=(), config: BandwidthConfig | None = None,
                 L: int = DEFAULT_GRID_SIZE) -> BandwidthFit:
    """Minimise :func:`ise_objective` for fixed conditioning ranks.

    The objective has local minima, so ``config.ise_restarts`` seeded starts
    are run; the first is ``initial_guess`` in every coordinate.
    """
    config = config or BandwidthConfig()
    U = as_copula_data(data)
    if U.shape[0] < 2:
        raise DataError("leave-one-out requires m >= 2")
    return minimize_bandwidth(lambda h: ise_objective(h, U, conditioning, L), U.shape[1], config,
                              restarts=config.ise_restarts)


def ql_objective(h, forecaster, realized, alphas=QUANTILE_LEVELS) -> float:
    """Total pinball loss of a forecast produced with bandwidths ``h``.

    ``forecaster(h)`` must return an ``(H, len(alphas))`` quantile table for the
    training day whose realised demand is ``realized``.
    """
    y = np.asarray(realized, dtype=float)
    if y.size == 0 or not np.all(np.isfinite(y)):
        raise DataError("training day needs a realisation for every step")
    return total_ql(forecaster(h), y, alphas)


def optimize_ql(history, training_dates, forecast_config, config: BandwidthConfig | None = None) -> dict:
    """One bandwidth vector per weekday, trained on past days.

    Parameters
    ----------
    history : :class:`~ecplf.forecasting.LoadHistory`
    training_dates : iterable of dates
        Usually seven consecutive days; each weekday keeps its own fit.
    forecast_config : :class:`~ecplf.forecasting.ForecastConfig`

    Returns
    -------
    dict
        Weekday name to :class:`BandwidthFit`.
    """
    from .forecasting import DayAheadProblem

    config = config or BandwidthConfig(method="ql")
    fits = {}
    for day in training_dates:
        problem = DayAheadProblem(history, day, forecast_config)
        realized = history.realized(day)
        D = forecast_config.lags.D

        def forecaster(h, problem=problem):
            return problem.forecast(h).quantile_table(QUANTILE_LEVELS)

        fit = minimize_bandwidth(lambda h: ql_objective(h, forecaster, realized), D, config,
                                 restarts=config.restarts)
        fits[WEEKDAYS[day.weekday()]] = fit
    return fits


def save_bandwidths(path, fits: dict, method: str) -> None:
    """Write ``[weekday]`` sections with method, h, objective and timestamp."""
    stamp = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    lines = []
    for key, fit in fits.items():
        h = fit.h if isinstance(fit, BandwidthFit) else np.asarray(fit)
        obj = fit.objective if isinstance(fit, BandwidthFit) else float("nan")
        lines += [
            f"[{key}]",
            f"method = {method}",
            f"weekday = {key}",
            "h = " + " ".join(repr(float(v)) for v in h),
            f"objective = {obj!r}",
            f"timestamp = {stamp}",
            "",
        ]
    Path(path).write_text("\n".join(lines))


def load_bandwidths(path) -> dict:
    """Inverse of :func:`save_bandwidths`; returns ``{key: h array}``."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: cannot read bandwidths ({exc})") from exc
    out = {}
    for section in parser.sections():
        try:
            out[section] = as_bandwidths([float(v) for v in parser[section]["h"].split()])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: bad bandwidth entry [{section}]") from exc
    return out
