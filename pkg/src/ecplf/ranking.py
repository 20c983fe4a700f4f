"""Rank transforms between physical space and copula (pseudo-observation) space.

A sample of ``m`` values is mapped to the normalised ranks
``{1/(m+1), ..., m/(m+1)}``. Ties get distinct ranks in order of first
occurrence, so every column of a copula data matrix holds each rank once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

__all__ = ["RankColumn", "rank_knots", "rank_transform", "pseudo_rank", "inverse_rank"]


def rank_knots(m: int) -> np.ndarray:
    """Return the ``m`` normalised ranks ``k/(m+1)``, ``k = 1..m``."""
    return np.arange(1, m + 1) / (m + 1)


def _as_finite_sample(values) -> np.ndarray:
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise DataError("empty sample")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite input")
    return x


def rank_transform(values) -> np.ndarray:
    """Normalised ordinal ranks of ``values``.

    ``output[i] = rank(values[i]) / (m + 1)`` where ties are broken by order of
    first occurrence (stable ordinal ranking).

    Examples
    --------
    >>> rank_transform([3.2, 1.1, 2.5])
    array([0.75, 0.25, 0.5 ])
    """
    x = _as_finite_sample(values)
    m = x.size
    order = np.argsort(x, kind="stable")
    out = np.empty(m)
    out[order] = rank_knots(m)
    return out


@dataclass(frozen=True)
class RankColumn:
    """Sorted physical values of one design-matrix column and their rank knots.

    ``ranks[k]`` is the rank attached to ``physical_sorted[k]``; together they
    define the piecewise-linear maps used by :func:`pseudo_rank` and
    :func:`inverse_rank`.
    """

    physical_sorted: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        ps = np.asarray(self.physical_sorted, dtype=float)
        rk = np.asarray(self.ranks, dtype=float)
        if ps.ndim != 1 or ps.size == 0:
            raise DataError("rank column must be a non-empty 1-d array")
        if rk.shape != ps.shape:
            raise DataError("ranks and physical values differ in length")
        if np.any(np.diff(ps) < 0):
            raise DataError("physical values must be non-decreasing")
        object.__setattr__(self, "physical_sorted", ps)
        object.__setattr__(self, "ranks", rk)

    @classmethod
    def from_values(cls, values) -> "RankColumn":
        x = _as_finite_sample(values)
        return cls(np.sort(x, kind="stable"), rank_knots(x.size))

    @property
    def m(self) -> int:
        return self.physical_sorted.size

    @property
    def min(self) -> float:
        return float(self.physical_sorted[0])

    @property
    def max(self) -> float:
        return float(self.physical_sorted[-1])


def pseudo_rank(new_value, column: RankColumn):
    """Place fresh physical value(s) into the rank space of ``column``.

    The empirical CDF is interpolated linearly between adjacent ranks and
    clamped to ``[1/(m+1), m/(m+1)]``. A value that coincides with a block of
    tied historical values gets the mean rank of that block.
    """
    x = np.asarray(new_value, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite input")
    ps, rk = column.physical_sorted, column.ranks
    flat = np.atleast_1d(x).ravel()
    lo = np.searchsorted(ps, flat, side="left")
    hi = np.searchsorted(ps, flat, side="right")
    m = ps.size
    csum = np.concatenate(([0.0], np.cumsum(rk)))
    tied = hi > lo
    # Strictly between two distinct knots: linear interpolation.
    a = np.clip(lo, 1, max(m - 1, 1))
    if m > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            w = (flat - ps[a - 1]) / (ps[a] - ps[a - 1])
            out = rk[a - 1] + w * (rk[a] - rk[a - 1])
    else:
        out = np.full(flat.size, rk[0])
    out = np.where(lo == 0, rk[0], out)
    out = np.where(lo == m, rk[-1], out)
    with np.errstate(invalid="ignore", divide="ignore"):
        tie_mean = (csum[hi] - csum[lo]) / (hi - lo)
    # Single exact hit returns the stored knot bit-for-bit.
    tie_mean = np.where(hi - lo == 1, rk[np.minimum(lo, m - 1)], tie_mean)
    out = np.where(tied, tie_mean, out)
    if x.ndim == 0:
        return float(out[0])
    return out.reshape(x.shape)


def inverse_rank(u, column: RankColumn):
    """Map rank(s) ``u`` in (0, 1) back to physical units.

    Piecewise-linear empirical quantile through the knots
    ``(k/(m+1), x_(k))`` with flat extrapolation beyond the extreme knots.
    """
    uu = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(uu)) or np.any(uu <= 0.0) or np.any(uu >= 1.0):
        raise DataError("rank must lie strictly inside (0, 1)")
    out = np.interp(uu, column.ranks, column.physical_sorted)
    if uu.ndim == 0:
        return float(out)
    return out
