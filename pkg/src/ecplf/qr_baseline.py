"""Linear quantile-regression benchmark.

One weight vector ``(intercept, week-lag power, temperature)`` per quantile
level and per day cluster, each fitted exactly by linear programming.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np
from scipy.optimize import linprog

from .exceptions import DataError, NumericalError
from .features import STEPS_PER_DAY, LagSpec, lagged_rows
from .metrics import QUANTILE_LEVELS, quantile_loss

__all__ = [
    "QRModel",
    "fit_qr",
    "fit_qr_model",
    "predict_qr",
    "count_crossings",
    "pinball_objective",
    "QR_LAGS",
    "training_rows",
    "predict_day",
]

logger = logging.getLogger(__name__)

#: The regression uses the same lags as the ISE-optimised copula model.
QR_LAGS = LagSpec((672,), (0,))

# Weight of the L1 penalty added when the design is rank deficient.
DEGENERATE_PENALTY = 1e-8


def pinball_objective(theta, X, y, alpha) -> float:
    """Training objective ``sum_i ql_alpha(x_i . theta, y_i)``; ``X`` includes the intercept column."""
    return float(np.sum(quantile_loss(alpha, X @ theta, y)))


def _with_intercept(features) -> np.ndarray:
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    return np.column_stack([np.ones(F.shape[0]), F])


def fit_qr(features, y, alpha: float) -> np.ndarray:
    """Fit one quantile level exactly.

    Solves the dual of the pinball-loss LP,
    ``max y'a  s.t.  X'a = (1 - alpha) X'1,  0 <= a <= 1``,
    and reads the weights off the equality-constraint multipliers.

    Parameters
    ----------
    features : array (n, p)
        Regressors without the intercept column.
    y : array (n,)
    alpha : float in (0, 1)

    Returns
    -------
    ndarray (p + 1,)
        Intercept first.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    X = _with_intercept(features)
    yy = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n != yy.size:
        raise DataError("features and targets differ in length")
    if n < 3:
        raise DataError("quantile regression needs at least 3 rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(yy))):
        raise DataError("non-finite regression data")

    if np.linalg.matrix_rank(X) < p:
        warnings.warn(
            "collinear quantile-regression design; adding a tiny L1 penalty",
            RuntimeWarning,
            stacklevel=2,
        )
        # Pseudo-rows (+c e_k, 0) and (-c e_k, 0) add c*|theta_k| for any alpha.
        pen = DEGENERATE_PENALTY * np.eye(p)
        X = np.vstack([X, pen, -pen])
        yy = np.concatenate([yy, np.zeros(2 * p)])

    res = linprog(
        -yy,
        A_eq=X.T,
        b_eq=(1.0 - alpha) * X.sum(axis=0),
        bounds=(0.0, 1.0),
        method="highs",
    )
    if res.status != 0:
        raise NumericalError(f"quantile regression LP failed: {res.message}")
    return -np.asarray(res.eqlin.marginals, dtype=float)


def count_crossings(quantiles) -> int:
    """Number of adjacent quantile pairs that decrease with the level."""
    q = np.atleast_2d(np.asarray(quantiles, dtype=float))
    return int(np.sum(np.diff(q, axis=1) < 0))


@dataclass
class QRModel:
    """Per-cluster weight tables of shape ``(len(alphas), 3)``."""

    alphas: np.ndarray = field(default_factory=lambda: QUANTILE_LEVELS.copy())
    weights: dict = field(default_factory=dict)

    def clusters(self):
        return sorted(self.weights)


def fit_qr_model(rows_by_cluster, alphas=QUANTILE_LEVELS) -> QRModel:
    """Fit every quantile level for every cluster.

    ``rows_by_cluster`` maps a cluster name to an ``(n, 3)`` array of
    ``(p_{t-672}, T_t, p_t)`` rows.
    """
    model = QRModel(alphas=np.asarray(alphas, dtype=float))
    for cluster, rows in rows_by_cluster.items():
        R = np.asarray(rows, dtype=float)
        if R.ndim != 2 or R.shape[1] != 3:
            raise DataError("quantile-regression rows must have 3 columns")
        model.weights[cluster] = np.array([fit_qr(R[:, :2], R[:, 2], a) for a in model.alphas])
    return model


def predict_qr(model: QRModel, features, cluster) -> np.ndarray:
    """Quantile table ``(n, len(alphas))``; crossings are kept and logged, never sorted away."""
    if cluster not in model.weights:
        raise DataError(f"no quantile-regression weights for cluster {cluster!r}")
    X = _with_intercept(features)
    q = X @ model.weights[cluster].T
    crossings = count_crossings(q)
    if crossings:
        logger.warning("quantile regression produced %d crossing pairs", crossings)
    return q


def training_rows(power, temperature, calendar, end: int, lags: LagSpec = QR_LAGS) -> dict:
    """``(p_{t-a}, T_{t-b}, p_t)`` rows for every complete step ``t < end``, split by cluster."""
    t = np.arange(min(end, len(power)))
    R = lagged_rows(power, temperature, lags, t)
    R = np.column_stack([R[:, 1:], R[:, 0]])
    day0 = power.start.date()
    labels = np.array([calendar.cluster(day0 + timedelta(days=int(d))) for d in t // STEPS_PER_DAY])
    ok = np.all(np.isfinite(R), axis=1)
    out = {}
    for cluster in sorted(set(labels[ok])):
        out[str(cluster)] = R[ok & (labels == cluster)]
    return out


def predict_day(model: QRModel, power, temperature, calendar, day, lags: LagSpec = QR_LAGS) -> np.ndarray:
    """Quantile table ``(96, len(alphas))`` for calendar day ``day``.

    Only lags of at least one day are meaningful here, so every regressor is
    observed by the day-ahead cutoff.
    """
    d = (day - power.start.date()).days
    t = np.arange(d * STEPS_PER_DAY, (d + 1) * STEPS_PER_DAY)
    X = lagged_rows(power, temperature, lags, t)[:, 1:]
    if not np.all(np.isfinite(X)):
        raise DataError(f"missing regressors for {day.isoformat()}")
    return predict_qr(model, X, calendar.cluster(day))
