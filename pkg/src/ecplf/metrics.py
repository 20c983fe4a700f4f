"""Probabilistic forecast scores: pinball loss, PICP and PINAW."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

__all__ = [
    "QUANTILE_LEVELS",
    "BANDS",
    "quantile_loss",
    "average_ql",
    "total_ql",
    "picp",
    "pinaw",
    "EvaluationReport",
    "evaluate",
    "average_reports",
    "write_report_csv",
    "write_report_kv",
]

#: The 99 equidistant quantile levels 0.01, ..., 0.99.
QUANTILE_LEVELS = np.arange(1, 100) / 100

#: Central prediction intervals reported next to the averaged loss.
BANDS = ((0.05, 0.95), (0.10, 0.90))


def quantile_loss(alpha, y_hat, y):
    """Pinball loss ``alpha*(y - y_hat)`` if ``y_hat <= y`` else ``(1-alpha)*(y_hat - y)``."""
    a = np.asarray(alpha, dtype=float)
    yh = np.asarray(y_hat, dtype=float)
    yy = np.asarray(y, dtype=float)
    out = np.where(yh <= yy, a * (yy - yh), (1.0 - a) * (yh - yy))
    if out.ndim == 0:
        return float(out)
    return out


def _check_table(quantiles, realized, alphas):
    q = np.asarray(quantiles, dtype=float)
    y = np.asarray(realized, dtype=float).ravel()
    a = np.asarray(alphas, dtype=float)
    if q.ndim != 2 or q.shape != (y.size, a.size):
        raise DataError(
            f"quantile table shape {q.shape} does not match ({y.size}, {a.size})"
        )
    return q, y, a


def total_ql(quantiles, realized, alphas=QUANTILE_LEVELS) -> float:
    """Sum of pinball losses over all steps and quantile levels."""
    q, y, a = _check_table(quantiles, realized, alphas)
    return float(np.sum(quantile_loss(a[None, :], q, y[:, None])))


def average_ql(quantiles, realized, alphas=QUANTILE_LEVELS) -> float:
    """Pinball loss averaged over the quantile levels and the horizon.

    ``quantiles`` has shape ``(H, len(alphas))``; ``realized`` has length ``H``.
    """
    q, y, a = _check_table(quantiles, realized, alphas)
    return float(np.mean(quantile_loss(a[None, :], q, y[:, None])))


def picp(lower, upper, y) -> float:
    """Fraction of realisations inside ``[lower, upper]`` (both ends inclusive)."""
    lo, hi, yy = (np.asarray(v, dtype=float).ravel() for v in (lower, upper, y))
    if not lo.size == hi.size == yy.size:
        raise DataError("bounds and realisations differ in length")
    return float(np.mean((lo <= yy) & (yy <= hi)))


def pinaw(lower, upper, y) -> float:
    """Mean interval width normalised by the range of the realisations."""
    lo, hi, yy = (np.asarray(v, dtype=float).ravel() for v in (lower, upper, y))
    if not lo.size == hi.size == yy.size:
        raise DataError("bounds and realisations differ in length")
    spread = yy.max() - yy.min()
    if not spread > 0:
        raise DataError("zero range normalizer")
    return float(np.sum(hi - lo) / (yy.size * spread))


def _band_key(band) -> str:
    lo, hi = band
    return f"{round(lo * 100)}-{round(hi * 100)}"


@dataclass
class EvaluationReport:
    avg_ql: float
    picp: dict = field(default_factory=dict)
    pinaw: dict = field(default_factory=dict)
    H: int = 0
    label: str = ""

    def as_row(self) -> dict:
        row = {"label": self.label, "QL": self.avg_ql}
        for key, v in self.picp.items():
            row[f"PICP {key}"] = v
        for key, v in self.pinaw.items():
            row[f"PINAW {key}"] = v
        return row


def _column(alphas, level):
    idx = np.flatnonzero(np.isclose(alphas, level))
    if idx.size != 1:
        raise DataError(f"quantile level {level} not present in the forecast")
    return int(idx[0])


def evaluate(quantiles, realized, alphas=QUANTILE_LEVELS, bands=BANDS, label="") -> EvaluationReport:
    """Score one forecast window (typically one day)."""
    q, y, a = _check_table(quantiles, realized, alphas)
    report = EvaluationReport(avg_ql=average_ql(q, y, a), H=y.size, label=label)
    for band in bands:
        lo = q[:, _column(a, band[0])]
        hi = q[:, _column(a, band[1])]
        key = _band_key(band)
        report.picp[key] = picp(lo, hi, y)
        report.pinaw[key] = pinaw(lo, hi, y)
    return report


def average_reports(reports, label="") -> EvaluationReport:
    """Equal-weight average of per-day reports."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to average")
    out = EvaluationReport(
        avg_ql=float(np.mean([r.avg_ql for r in reports])),
        H=sum(r.H for r in reports),
        label=label,
    )
    for key in reports[0].picp:
        out.picp[key] = float(np.mean([r.picp[key] for r in reports]))
        out.pinaw[key] = float(np.mean([r.pinaw[key] for r in reports]))
    return out


def write_report_csv(reports, path) -> None:
    reports = list(reports)
    rows = [r.as_row() for r in reports]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def write_report_kv(reports, path) -> None:
    """Plain ``key = value`` document, one section per report."""
    lines = []
    for r in reports:
        lines.append(f"[{r.label or 'report'}]")
        for k, v in r.as_row().items():
            if k == "label":
                continue
            lines.append(f"{k} = {v:.6f}")
        lines.append(f"H = {r.H}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
