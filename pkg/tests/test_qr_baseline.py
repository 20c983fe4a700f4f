import logging
from datetime import date

import numpy as np
import pytest
from scipy.optimize import linprog

from ecplf.exceptions import DataError
from ecplf.features import Calendar
from ecplf.metrics import QUANTILE_LEVELS
from ecplf.qr_baseline import (
    QRModel,
    count_crossings,
    fit_qr,
    fit_qr_model,
    pinball_objective,
    predict_day,
    predict_qr,
    training_rows,
)


def lad_oracle(X, y):
    """Primal LAD problem: min sum(u + v) s.t. X theta + u - v = y."""
    n, p = X.shape
    c = np.concatenate([np.zeros(p), np.ones(2 * n)])
    A = np.hstack([X, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    return res.x[:p], res.fun


def test_noiseless_fit(rng):
    F = np.column_stack([rng.uniform(50, 150, 60), rng.uniform(-5, 25, 60)])
    y = 2.0 * F[:, 0]
    for a in (0.01, 0.3, 0.5, 0.99):
        np.testing.assert_allclose(fit_qr(F, y, a), [0.0, 2.0, 0.0], atol=1e-4)


def test_median_matches_lad_oracle(rng):
    for m in (12, 30, 50):
        F = rng.normal(size=(m, 2))
        y = F @ [1.0, -0.5] + rng.standard_t(2, size=m)
        theta = fit_qr(F, y, 0.5)
        X = np.column_stack([np.ones(m), F])
        _, best = lad_oracle(X, y)
        assert pinball_objective(theta, X, y, 0.5) == pytest.approx(0.5 * best, rel=1e-9, abs=1e-9)


def test_optimality_under_perturbation(rng):
    F = rng.normal(size=(80, 2))
    y = 3 + F @ [1.0, 2.0] + rng.exponential(size=80)
    X = np.column_stack([np.ones(80), F])
    for a in (0.1, 0.5, 0.9):
        theta = fit_qr(F, y, a)
        base = pinball_objective(theta, X, y, a)
        for k in range(3):
            for s in (-1e-3, 1e-3):
                moved = theta.copy()
                moved[k] += s
                assert pinball_objective(moved, X, y, a) >= base - 1e-9


def test_scale_equivariance(rng):
    F = rng.normal(size=(40, 2))
    y = F @ [1.0, 2.0] + rng.normal(size=40)
    X = np.column_stack([np.ones(40), F])
    for a in (0.2, 0.7):
        t1 = fit_qr(F, y, a)
        t3 = fit_qr(F, 3.0 * y, a)
        assert pinball_objective(t3, X, 3.0 * y, a) == pytest.approx(
            3.0 * pinball_objective(t1, X, y, a), rel=1e-9)
        np.testing.assert_allclose(t3, 3.0 * t1, atol=1e-6)


def test_collinear_design_warns(rng):
    x = rng.normal(size=30)
    F = np.column_stack([x, 2 * x])
    y = x + rng.normal(size=30) * 0.1
    with pytest.warns(RuntimeWarning, match="collinear"):
        theta = fit_qr(F, y, 0.5)
    assert np.all(np.isfinite(theta))


def test_fit_errors():
    with pytest.raises(DataError):
        fit_qr(np.zeros((2, 2)), np.zeros(2), 0.5)
    with pytest.raises(ValueError):
        fit_qr(np.zeros((5, 2)), np.zeros(5), 1.0)
    with pytest.raises(DataError):
        fit_qr(np.full((5, 2), np.nan), np.zeros(5), 0.5)


def test_predict_examples(caplog):
    zero = QRModel(weights={"working": np.zeros((99, 3))})
    assert np.all(predict_qr(zero, [[10.0, 5.0]], "working") == 0.0)

    w = np.column_stack([QUANTILE_LEVELS, np.full(99, 2.0), np.full(99, -1.0)])
    q = predict_qr(QRModel(weights={"working": w}), np.random.default_rng(0).normal(size=(20, 2)), "working")
    assert count_crossings(q) == 0

    crossing = np.column_stack([np.zeros(99), np.linspace(1, -1, 99), np.zeros(99)])
    with caplog.at_level(logging.WARNING, logger="ecplf.qr_baseline"):
        q = predict_qr(QRModel(weights={"working": crossing}), [[5.0, 0.0]], "working")
    assert count_crossings(q) >= 1
    assert "crossing pairs" in caplog.text
    with pytest.raises(DataError):
        predict_qr(zero, [[1.0, 1.0]], "holiday")


def test_training_rows_and_predict_day(small_history):
    power, temperature = small_history.power, small_history.temperature
    cal = Calendar()
    rows = training_rows(power, temperature, cal, end=30 * 96)
    assert set(rows) == {"holiday", "working"}
    n = sum(r.shape[0] for r in rows.values())
    assert n == 23 * 96  # the first week lacks the week lag
    # target column is the power at t, first column the power one week earlier
    w = rows["working"]
    assert np.all(np.isin(w[:, 2], power.values[: 30 * 96]))
    model = fit_qr_model({k: v[::4] for k, v in rows.items()}, alphas=QUANTILE_LEVELS[::10])
    q = predict_day(model, power, temperature, cal, date(2018, 2, 5))
    assert q.shape == (96, 10)
    assert np.all(np.isfinite(q))
