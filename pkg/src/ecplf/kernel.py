"""Beta-kernel smoothing of the empirical copula.

Densities live on the unit interval discretised at the ``L`` cell midpoints
``u_l = (l - 0.5) / L``. Every kernel product is accumulated in log space and
exponentiated after a max-shift, so very small bandwidths do not underflow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, logsumexp, xlog1py, xlogy

from .exceptions import DataError

__all__ = [
    "GridDensity",
    "ConditionalDensityEstimator",
    "beta_pdf",
    "log_beta_kernel",
    "grid_points",
    "empirical_copula_cdf",
    "joint_density",
    "conditional_density",
    "as_bandwidths",
    "as_copula_data",
]

DEFAULT_GRID_SIZE = 100

# Maximum dimension for the tensor-grid joint density.
MAX_JOINT_DIM = 3

_LOG_TINY = np.log(np.finfo(float).tiny)


def grid_points(L: int) -> np.ndarray:
    """Cell midpoints ``(l - 0.5)/L`` for ``l = 1..L``."""
    if L < 1:
        raise ValueError("grid size must be >= 1")
    return (np.arange(L) + 0.5) / L


def as_bandwidths(h, D: int | None = None) -> np.ndarray:
    """Validate a bandwidth vector (one positive value per dimension)."""
    hh = np.atleast_1d(np.asarray(h, dtype=float))
    if hh.ndim != 1 or hh.size == 0:
        raise ValueError("bandwidths must be a non-empty vector")
    if D is not None:
        if hh.size == 1 and D > 1:
            hh = np.full(D, hh[0])
        elif hh.size != D:
            raise ValueError(f"expected {D} bandwidths, got {hh.size}")
    if not np.all(np.isfinite(hh)) or np.any(hh <= 0):
        raise ValueError("bandwidths must be finite and positive")
    return hh


def as_copula_data(data) -> np.ndarray:
    """Validate an ``m x D`` matrix of pseudo-observations in (0, 1)."""
    U = np.asarray(data, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.ndim != 2 or U.shape[0] == 0 or U.shape[1] == 0:
        raise DataError("copula data must be a non-empty m x D matrix")
    if not np.all((U > 0) & (U < 1)):
        raise DataError("copula data must lie strictly inside (0, 1)")
    return U


def beta_pdf(z, alpha, beta):
    """Density of the Beta(alpha, beta) distribution at ``z`` in [0, 1].

    Evaluated as ``exp(log B(alpha, beta)^-1 + (alpha-1) log z + (beta-1) log(1-z))``.
    At the end points the limit is returned: zero when the exponent is
    positive, the finite boundary value when it is zero.

    >>> float(beta_pdf(0.5, 2, 2))
    1.5
    """
    z = np.asarray(z, dtype=float)
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("beta shape parameters must be positive")
    if np.any(z < 0) or np.any(z > 1):
        raise ValueError("z must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        logp = xlogy(a - 1, z) + xlog1py(b - 1, -z) - betaln(a, b)
    out = np.exp(logp)
    if out.ndim == 0:
        return float(out)
    return out


def log_beta_kernel(samples, u, h: float) -> np.ndarray:
    """Log of ``K(z, u/h + 1, (1-u)/h + 1)`` for every (u, z) pair.

    Parameters
    ----------
    samples : array of shape (m,)
        Kernel arguments ``z`` (pseudo-observations) in (0, 1).
    u : array of shape (n,)
        Evaluation points in [0, 1]; they set the kernel shape parameters.
    h : float
        Bandwidth of this dimension.

    Returns
    -------
    ndarray of shape (n, m)
    """
    z = np.asarray(samples, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a1 = u / h
    b1 = (1.0 - u) / h
    norm = betaln(a1 + 1.0, b1 + 1.0)
    return np.outer(a1, np.log(z)) + np.outer(b1, np.log1p(-z)) - norm[:, None]


def empirical_copula_cdf(data, u) -> float:
    """Empirical copula ``(1/m) sum_i prod_j 1{U_ij <= u_j}``."""
    U = as_copula_data(data)
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    if uu.shape != (U.shape[1],):
        raise DataError(f"expected a point of dimension {U.shape[1]}, got {uu.shape}")
    return float(np.mean(np.all(U <= uu, axis=1)))


@dataclass(frozen=True)
class GridDensity:
    """A normalised density on the midpoint grid of (0, 1).

    ``density[l]`` is the value on cell ``[l/L, (l+1)/L)``; the density is taken
    constant within each cell, so the CDF is piecewise linear.
    """

    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.ndim != 1 or d.size == 0:
            raise DataError("grid density must be a non-empty vector")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise DataError("grid density values must be finite and non-negative")
        object.__setattr__(self, "density", d)

    @property
    def L(self) -> int:
        return self.density.size

    @property
    def grid_points(self) -> np.ndarray:
        return grid_points(self.L)

    @property
    def cell_mass(self) -> np.ndarray:
        return self.density / self.L

    @property
    def integral(self) -> float:
        return float(np.sum(self.density) / self.L)

    def cdf_at_edges(self) -> np.ndarray:
        """CDF at the ``L + 1`` cell edges ``0, 1/L, ..., 1``."""
        c = np.concatenate(([0.0], np.cumsum(self.cell_mass)))
        return c / c[-1]

    def quantile(self, alpha):
        """Rank-space quantile(s) by inverting the piecewise-linear CDF."""
        a = np.asarray(alpha, dtype=float)
        return self._invert(a)

    def _invert(self, p):
        cdf = self.cdf_at_edges()
        L = self.L
        pf = np.atleast_1d(p).ravel()
        # First cell whose upper edge reaches p; skips zero-mass cells.
        k = np.searchsorted(cdf[1:], pf, side="left")
        k = np.clip(k, 0, L - 1)
        lo, hi = cdf[k], cdf[k + 1]
        width = hi - lo
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(width > 0, (pf - lo) / width, 0.5)
        u = (k + np.clip(frac, 0.0, 1.0)) / L
        if np.ndim(p) == 0:
            return float(u[0])
        return u.reshape(np.shape(p))

    def sample(self, rng: np.random.Generator, size=None):
        """Draw ranks: pick a cell by its mass, then jitter uniformly within it."""
        n = 1 if size is None else int(np.prod(size))
        cdf = self.cdf_at_edges()
        v = rng.random(n)
        cell = np.clip(np.searchsorted(cdf[1:], v, side="right"), 0, self.L - 1)
        # Never land in a zero-mass cell (possible only through rounding).
        mass = self.cell_mass
        if np.any(mass[cell] <= 0):
            nz = np.flatnonzero(mass > 0)
            idx = np.clip(np.searchsorted(nz, cell), 0, nz.size - 1)
            cell = np.where(mass[cell] > 0, cell, nz[idx])
        jitter = rng.random(n)
        u = (cell + jitter) / self.L
        u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        if size is None:
            return float(u[0])
        return u.reshape(size)


def _normalise_log(logacc: np.ndarray) -> np.ndarray:
    """Density values whose midpoint-rule integral is one."""
    n = logacc.size
    return n * np.exp(logacc - logsumexp(logacc))


def joint_density(data, h, L: int = DEFAULT_GRID_SIZE, normalize: bool = True) -> np.ndarray:
    """Beta-kernel copula density on the full ``L**D`` tensor grid.

    Evaluates ``(1/A) sum_i prod_j K(U_ij, u_j/h_j + 1, (1-u_j)/h_j + 1)`` with
    ``A = m * prod(h)``. With ``normalize=True`` (default) the tensor is rescaled
    so that its midpoint-rule integral over the unit hypercube is one.
    """
    U = as_copula_data(data)
    m, D = U.shape
    if D > MAX_JOINT_DIM:
        raise ValueError(f"joint density restricted to D <= {MAX_JOINT_DIM}")
    hh = as_bandwidths(h, D)
    u = grid_points(L)
    logs, shifts = [], []
    for j in range(D):
        lk = log_beta_kernel(U[:, j], u, hh[j])
        s = lk.max(axis=1)
        logs.append(np.exp(lk - s[:, None]))
        shifts.append(s)
    letters = "abc"[:D]
    spec = ",".join(f"{c}i" for c in letters) + "->" + letters
    with np.errstate(divide="ignore"):
        log_t = np.log(np.einsum(spec, *logs))
    for j, s in enumerate(shifts):
        shape = [1] * D
        shape[j] = L
        log_t = log_t + s.reshape(shape)
    if normalize:
        flat = log_t.ravel()
        return (flat.size * np.exp(flat - logsumexp(flat))).reshape(log_t.shape)
    return np.exp(log_t - np.log(m) - np.sum(np.log(hh)))


class ConditionalDensityEstimator:
    """Conditional beta-kernel density of the first column given the others.

    The target-column kernel matrix depends only on the data, the first
    bandwidth and the grid, so it is computed once and reused for every
    conditioning vector.
    """

    def __init__(self, data, h, L: int = DEFAULT_GRID_SIZE):
        self.U = as_copula_data(data)
        self.m, self.D = self.U.shape
        self.h = as_bandwidths(h, self.D)
        self.L = int(L)
        self.u = grid_points(self.L)
        self._target = log_beta_kernel(self.U[:, 0], self.u, self.h[0])
        self._log_z = np.log(self.U[:, 1:])
        self._log_1mz = np.log1p(-self.U[:, 1:])
        self._marginal = None

    def log_weights(self, fixed) -> np.ndarray:
        """Per-sample log of the product of conditioning-column kernels."""
        f = np.atleast_1d(np.asarray(fixed, dtype=float))
        if f.shape != (self.D - 1,):
            raise DataError(f"expected {self.D - 1} conditioning values, got {f.size}")
        if np.any(~(f > 0) | ~(f < 1)):
            raise DataError("conditioning values must lie strictly inside (0, 1)")
        if self.D == 1:
            return np.zeros(self.m)
        hc = self.h[1:]
        a1 = f / hc
        b1 = (1.0 - f) / hc
        w = self._log_z @ a1 + self._log_1mz @ b1
        return w - np.sum(betaln(a1 + 1.0, b1 + 1.0))

    def log_accumulator(self, fixed=()) -> np.ndarray:
        """Log of the unnormalised sum over samples at every grid point."""
        w = self.log_weights(fixed)
        return logsumexp(self._target + w[None, :], axis=1)

    def marginal(self) -> GridDensity:
        """Unconditional density of the target column."""
        if self._marginal is None:
            self._marginal = GridDensity(_normalise_log(logsumexp(self._target, axis=1)))
        return self._marginal

    def underflows(self, log_weights) -> bool:
        """True when every conditioning weight is numerically zero."""
        w = np.asarray(log_weights)
        return self.D > 1 and (not np.any(np.isfinite(w)) or float(np.max(w)) < _LOG_TINY)

    def density(self, fixed=(), warn: bool = True) -> GridDensity:
        w = self.log_weights(fixed)
        if self.underflows(w):
            if warn:
                warnings.warn(
                    "conditioning weights underflow; falling back to the marginal density",
                    RuntimeWarning,
                    stacklevel=2,
                )
            return self.marginal()
        acc = logsumexp(self._target + w[None, :], axis=1)
        return GridDensity(_normalise_log(acc))


def conditional_density(data, h, fixed=(), L: int = DEFAULT_GRID_SIZE) -> GridDensity:
    """Density of column 0 on the grid, given fixed ranks of columns 1..D-1."""
    return ConditionalDensityEstimator(data, h, L).density(fixed)
