"""Posterior prevalence curves on a prediction grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp
from .domain import TimeGrid
from .inference import PosteriorDraws, probit

DEFAULT_MAX_DRAWS = 1000


@dataclass(frozen=True)
class CurveSummary:
    """Pointwise posterior median and central 95% interval of prevalence."""

    times: np.ndarray
    median: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray

    def __post_init__(self):
        n = self.times.size
        if not (self.median.size == self.lo95.size == self.hi95.size == n):
            raise ValueError("summary columns differ in length")

    def __len__(self):
        return self.times.size


def default_prediction_grid(grid: TimeGrid, points=200) -> TimeGrid:
    """``points`` evenly spaced times over ``[0, interval_span]``."""
    if points < 2:
        raise ValueError("need at least 2 prediction points")
    span = grid.interval_span
    start = min(0.0, float(grid.times.min())) if len(grid) else 0.0
    return TimeGrid(np.linspace(start, span, points), span)


def _draw_indices(total, max_draws):
    if max_draws is None or total <= max_draws:
        return np.arange(total)
    return np.unique(np.linspace(0, total - 1, max_draws).round().astype(np.int64))


def latent_at(draws: PosteriorDraws, grid_pred, seed, max_draws=DEFAULT_MAX_DRAWS):
    """Latent draws on ``grid_pred``, shape (draws, len(grid_pred)).

    Prediction times that coincide with observation times reuse the stored
    latent values; the rest get a fresh conditional Gaussian draw per
    posterior draw, so bands include interpolation uncertainty.
    """
    t_obs = np.asarray(draws.times, dtype=float)
    t_pred = grid_pred.times if isinstance(grid_pred, TimeGrid) else np.asarray(grid_pred, dtype=float)
    pos = {t: i for i, t in enumerate(t_obs)}
    hit = np.array([t in pos for t in t_pred], dtype=bool)
    src = np.array([pos[t] for t in t_pred[hit]], dtype=np.int64)
    t_new = t_pred[~hit]

    mu, sigma, ell, w = draws.flat("mu"), draws.flat("sigma"), draws.flat("ell"), draws.flat("W")
    idx = _draw_indices(mu.size, max_draws)
    rng = np.random.default_rng(seed)
    out = np.empty((idx.size, t_pred.size))
    for row, d in enumerate(idx):
        out[row, hit] = w[d, src]
        if t_new.size:
            theta = gp.GpHyperparams(float(sigma[d]), float(ell[d]))
            mean, cov = gp.predict_conditional(t_obs, w[d], t_new, theta, jitter=draws.jitter)
            out[row, ~hit] = gp.sample_mvn(mean, cov, rng, scale=theta.sigma**2)
    return out + mu[idx, None]


def summarize_curve(draws: PosteriorDraws, grid_pred, seed=0, max_draws=DEFAULT_MAX_DRAWS) -> CurveSummary:
    """Median and 95% band of prevalence on ``grid_pred`` (linear-interpolated percentiles)."""
    f = latent_at(draws, grid_pred, seed, max_draws)
    p = probit(f)
    lo, med, hi = np.percentile(p, [2.5, 50.0, 97.5], axis=0)
    t = grid_pred.times if isinstance(grid_pred, TimeGrid) else np.asarray(grid_pred, dtype=float)
    # percentiles are monotone in q, but guard the invariant against rounding
    lo, hi = np.minimum(lo, med), np.maximum(hi, med)
    return CurveSummary(np.array(t, dtype=float), med, lo, hi)


def observed_summary(draws: PosteriorDraws) -> CurveSummary:
    """Summary at the observation times straight from the stored draws."""
    p = draws.prevalence().reshape(-1, draws.times.size)
    lo, med, hi = np.percentile(p, [2.5, 50.0, 97.5], axis=0)
    return CurveSummary(np.array(draws.times, dtype=float), med, lo, hi)


def curve_mae(summary: CurveSummary, true_p) -> float:
    true_p = np.asarray(true_p, dtype=float)
    if true_p.size != summary.median.size:
        raise ValueError("truth and summary differ in length")
    return float(np.mean(np.abs(summary.median - true_p)))
