"""Gaussian-process machinery for the latent prevalence process."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, optimize, special

from . import kernels
from .domain import TimeGrid

DEFAULT_REL_JITTER = 1e-8
MAX_JITTER_RETRIES = 8


class GPError(RuntimeError):
    """Covariance factorization or prior fitting failed."""


@dataclass(frozen=True)
class GpHyperparams:
    sigma: float
    ell: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.ell > 0):
            raise ValueError(f"sigma and ell must be positive, got sigma={self.sigma}, ell={self.ell}")


def covariance(t, t_prime, theta: GpHyperparams) -> float:
    d = t - t_prime
    return theta.sigma**2 * math.exp(-(d * d) / (2.0 * theta.ell**2))


def cov_matrix(t1, t2, theta: GpHyperparams):
    t1 = np.ascontiguousarray(t1, dtype=float)
    t2 = np.ascontiguousarray(t2, dtype=float)
    return kernels.sq_exp_cov(t1, t2, float(theta.sigma), float(theta.ell))


def cov_matrix_sym(t, theta: GpHyperparams):
    return kernels.sq_exp_cov_sym(np.ascontiguousarray(t, dtype=float), float(theta.sigma), float(theta.ell))


def _times(grid):
    return grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)


def cholesky_jittered(mat, jitter=None, scale=None):
    """Lower Cholesky factor of ``mat + jitter * I``.

    Starts at ``jitter`` (default ``1e-8 * scale``) and doubles it on failure,
    up to :data:`MAX_JITTER_RETRIES` times. Returns ``(L, jitter_used)``.
    """
    n = mat.shape[0]
    if scale is None:
        scale = float(np.max(np.diag(mat))) if n else 1.0
    base = DEFAULT_REL_JITTER * scale
    jit = base if jitter is None else float(jitter)
    diag = np.arange(n)
    for attempt in range(MAX_JITTER_RETRIES + 1):
        try:
            work = mat.copy()
            work[diag, diag] += jit
            return np.linalg.cholesky(work), jit
        except np.linalg.LinAlgError:
            jit = base if jit <= 0 else 2.0 * jit
    raise GPError(
        f"Cholesky failed after {MAX_JITTER_RETRIES} jitter doublings (last jitter {jit / 2:.3g}); "
        "the grid is too dense for this lengthscale, pass a larger jitter"
    )


@dataclass(frozen=True)
class CovarianceMatrix:
    matrix: np.ndarray
    jitter: float
    chol: np.ndarray

    def reconstruct(self):
        return self.chol @ self.chol.T


def build_covariance(grid, theta: GpHyperparams, jitter: Optional[float] = None) -> CovarianceMatrix:
    """Covariance over ``grid`` with a factorized, jittered diagonal.

    The stored ``matrix`` includes the jitter actually used, so
    ``chol @ chol.T`` reproduces it.
    """
    if jitter is not None and jitter < 0:
        raise ValueError("jitter must be non-negative")
    t = _times(grid)
    base = cov_matrix_sym(t, theta)
    chol, used = cholesky_jittered(base, jitter, scale=theta.sigma**2)
    mat = base + used * np.eye(t.size)
    for a in (mat, chol):
        a.setflags(write=False)
    return CovarianceMatrix(mat, used, chol)


def sample_prior(grid, theta: GpHyperparams, rng, size=None, jitter=None):
    """Zero-mean GP draws ``L @ z``; with ``size`` returns an array of shape (size, n)."""
    cov = build_covariance(grid, theta, jitter)
    n = cov.chol.shape[0]
    if size is None:
        return cov.chol @ rng.standard_normal(n)
    return rng.standard_normal((size, n)) @ cov.chol.T


def predict_conditional(grid_obs, w_obs, grid_new, theta: GpHyperparams, jitter=None, chol=None):
    """Gaussian conditional of the latent process at ``grid_new`` given ``w_obs``.

    New times that coincide with observed ones are returned exactly (mean
    ``w_obs``, zero variance) rather than through the jittered solve.
    ``chol`` may carry a precomputed factor of the observed covariance.
    """
    t_obs = _times(grid_obs)
    t_new = _times(grid_new)
    w_obs = np.asarray(w_obs, dtype=float)
    if w_obs.size != t_obs.size:
        raise ValueError(f"w_obs has {w_obs.size} values for {t_obs.size} times")
    if t_obs.size == 0:
        return np.zeros(t_new.size), cov_matrix_sym(t_new, theta)
    pos = {t: i for i, t in enumerate(t_obs)}
    hit = np.array([t in pos for t in t_new], dtype=bool)
    mean = np.zeros(t_new.size)
    cov = np.zeros((t_new.size, t_new.size))
    mean[hit] = w_obs[[pos[t] for t in t_new[hit]]]
    free = np.flatnonzero(~hit)
    if free.size:
        if chol is None:
            chol = build_covariance(t_obs, theta, jitter).chol
        t_free = t_new[free]
        k_on = cov_matrix(t_obs, t_free, theta)
        a = linalg.solve_triangular(chol, k_on, lower=True, check_finite=False)
        white = linalg.solve_triangular(chol, w_obs, lower=True, check_finite=False)
        mean[free] = a.T @ white
        sub = cov_matrix_sym(t_free, theta) - a.T @ a
        cov[np.ix_(free, free)] = 0.5 * (sub + sub.T)
    return mean, cov


def sample_mvn(mean, cov, rng, scale=None):
    """One draw from N(mean, cov) for a possibly rank-deficient ``cov``."""
    n = mean.size
    if n == 0:
        return mean.copy()
    try:
        chol, _ = cholesky_jittered(cov, scale=scale)
        return mean + chol @ rng.standard_normal(n)
    except GPError:
        vals, vecs = np.linalg.eigh(cov)
        return mean + vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(n))


# -- priors ---------------------------------------------------------------------


@dataclass(frozen=True)
class LengthscalePrior:
    """Inverse-gamma prior on the lengthscale with density ∝ ell^(-shape-1) exp(-rate/ell)."""

    shape: float
    rate: float
    low: float = float("nan")
    high: float = float("nan")

    def cdf(self, x):
        return special.gammaincc(self.shape, self.rate / np.asarray(x, dtype=float))

    def logpdf(self, x):
        if x <= 0:
            return -math.inf
        a, b = self.shape, self.rate
        return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x

    def median(self):
        return self.rate / special.gammainccinv(self.shape, 0.5)


def _upper_tail_gap(log_a, low, high, tail):
    a = math.exp(log_a)
    b = low * special.gammainccinv(a, tail)
    return special.gammainc(a, b / high) - tail


def fit_lengthscale_prior(grid, tail_prob=0.01, low=None, high=None) -> LengthscalePrior:
    """Inverse-gamma prior placing ``tail_prob`` mass below ``low`` and above ``high``.

    ``low`` defaults to the shortest gap between observation times and
    ``high`` to the length of the observation interval.
    """
    if not 0.0 < tail_prob < 0.5:
        raise ValueError("tail_prob must lie in (0, 0.5)")
    if grid is not None:
        low = grid.min_gap() if low is None else low
        high = grid.interval_span if high is None else high
    if not (0 < low < high):
        raise ValueError(f"need 0 < low < high, got low={low}, high={high}")
    lo_bracket, hi_bracket = math.log(1e-3), math.log(1e5)
    g_lo = _upper_tail_gap(lo_bracket, low, high, tail_prob)
    g_hi = _upper_tail_gap(hi_bracket, low, high, tail_prob)
    if not (g_lo > 0 > g_hi):
        raise GPError(
            f"no inverse-gamma with {tail_prob} mass in each tail for low={low}, high={high}: "
            f"upper-tail excess {g_lo:.3g} at shape 1e-3 and {g_hi:.3g} at shape 1e5"
        )
    try:
        log_a, res = optimize.brentq(
            _upper_tail_gap, lo_bracket, hi_bracket, args=(low, high, tail_prob), xtol=1e-14, full_output=True
        )
    except (RuntimeError, ValueError) as err:
        raise GPError(f"lengthscale prior root finding failed: {err}") from err
    if not res.converged:
        raise GPError(f"lengthscale prior root finding did not converge: {res.flag}")
    a = math.exp(log_a)
    return LengthscalePrior(a, float(low * special.gammainccinv(a, tail_prob)), float(low), float(high))


@dataclass(frozen=True)
class PriorConfig:
    mu_sd: float = 2.0
    sigma_sd: float = 1.0
    ell_tail_prob: float = 0.01
    ell_shape: Optional[float] = None
    ell_rate: Optional[float] = None

    def resolve(self, grid) -> "Priors":
        if self.ell_shape is not None and self.ell_rate is not None:
            ell = LengthscalePrior(self.ell_shape, self.ell_rate)
        elif self.ell_shape is not None or self.ell_rate is not None:
            raise ValueError("prior.ell_shape and prior.ell_rate must be given together")
        else:
            ell = fit_lengthscale_prior(grid, self.ell_tail_prob)
        return Priors(self.mu_sd, self.sigma_sd, ell)


@dataclass(frozen=True)
class Priors:
    mu_sd: float
    sigma_sd: float
    ell: LengthscalePrior

    def sigma_median(self):
        return self.sigma_sd * special.ndtri(0.75)


_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def log_prior(mu, theta, priors: Priors) -> float:
    """Normal(mu) + HalfNormal(sigma) + InverseGamma(ell) log densities.

    ``theta`` may be a :class:`GpHyperparams` or a ``(sigma, ell)`` pair; a
    non-positive sigma or ell gives ``-inf``.
    """
    sigma, ell = (theta.sigma, theta.ell) if isinstance(theta, GpHyperparams) else theta
    if not (sigma > 0 and ell > 0):
        return -math.inf
    s_mu, s_sig = priors.mu_sd, priors.sigma_sd
    lp_mu = -0.5 * (mu / s_mu) ** 2 - math.log(s_mu) - _LOG_SQRT_2PI
    lp_sig = math.log(2.0) - 0.5 * (sigma / s_sig) ** 2 - math.log(s_sig) - _LOG_SQRT_2PI
    return lp_mu + lp_sig + priors.ell.logpdf(ell)
