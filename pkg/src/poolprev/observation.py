"""Pool positivity transform and the log-likelihoods of the sampling models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .domain import (
    EfficientLayout,
    GeneralLayout,
    IdealLayout,
    IndividualObservations,
    PooledObservations,
)


def _check_unit(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


def _check_size(m):
    m = np.asarray(m)
    if np.any(m < 1):
        raise ValueError("pool size must be at least 1")
    return m


def pool_probability(p, m):
    """Probability that a pool of ``m`` individuals tests positive.

    Computed as ``-expm1(m * log1p(-p))`` so small prevalences keep their
    digits for large pools.
    """
    p = _check_unit(p, "p")
    m = _check_size(m)
    with np.errstate(divide="ignore"):
        out = np.where(m == 1, p, -np.expm1(m * np.log1p(-p)))
    return float(out) if out.ndim == 0 else out


def invert_pool_probability(pi, m):
    """Individual prevalence implied by pool positivity ``pi`` at pool size ``m``."""
    pi = _check_unit(pi, "pi")
    m = _check_size(m)
    with np.errstate(divide="ignore"):
        out = np.where(m == 1, pi, -np.expm1(np.log1p(-pi) / m))
    return float(out) if out.ndim == 0 else out


def log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


@dataclass(frozen=True)
class LikelihoodTerms:
    """Flat binomial-block form of a dataset (see :mod:`poolprev.kernels`)."""

    tidx: np.ndarray
    trials: np.ndarray
    size: np.ndarray
    succ: np.ndarray
    logcoef: np.ndarray

    @classmethod
    def build(cls, tidx, trials, size, succ, coef=True):
        tidx = np.asarray(tidx, dtype=np.int64)
        trials = np.asarray(trials, dtype=float)
        size = np.asarray(size, dtype=float)
        succ = np.asarray(succ, dtype=float)
        keep = trials > 0
        tidx, trials, size, succ = tidx[keep], trials[keep], size[keep], succ[keep]
        logcoef = log_binom(trials, succ) if coef else np.zeros_like(trials)
        return cls(tidx, trials, size, succ, logcoef)

    def __len__(self):
        return self.tidx.size

    def args(self):
        return self.tidx, self.trials, self.size, self.succ, self.logcoef

    def loglik_p(self, p):
        with np.errstate(divide="ignore"):
            log1mp = np.log1p(-np.asarray(p, dtype=float))
        return float(kernels.terms_loglik(log1mp, *self.args()))

    def loglik_latent(self, f):
        return float(kernels.latent_loglik(np.ascontiguousarray(f, dtype=float), *self.args()))


def _general_terms(lay: GeneralLayout, compress):
    if not compress:
        ones = np.ones(lay.result.size)
        return LikelihoodTerms.build(lay.time_index, ones, lay.pool_size, lay.result, coef=False)
    keys = np.stack([lay.time_index, lay.pool_size], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    trials = np.bincount(inv, minlength=len(uniq))
    succ = np.bincount(inv, weights=lay.result, minlength=len(uniq))
    return LikelihoodTerms.build(uniq[:, 0], trials, uniq[:, 1], succ)


def likelihood_terms(data, compress=True) -> LikelihoodTerms:
    """Expand a dataset into binomial blocks.

    With ``compress`` the general layout is grouped into one block per
    (time, pool size), the cheapest equivalent form. The grouped form differs
    from the pool-by-pool Bernoulli product by a constant in ``p``.
    """
    if isinstance(data, IndividualObservations):
        return LikelihoodTerms.build(np.arange(data.k.size), data.k, np.ones(data.k.size), data.y)
    lay = data.layout
    if isinstance(lay, GeneralLayout):
        return _general_terms(lay, compress)
    if isinstance(lay, IdealLayout):
        return LikelihoodTerms.build(np.arange(lay.k.size), lay.k, lay.m, lay.y)
    n = lay.k.size
    idx = np.arange(n)
    has_rem = (lay.m_rem > 0).astype(float)
    return LikelihoodTerms.build(
        np.concatenate([idx, idx]),
        np.concatenate([lay.k - 1, has_rem]),
        np.concatenate([lay.m_star, np.maximum(lay.m_rem, 1)]),
        np.concatenate([lay.y1, lay.y2 * has_rem]),
    )


def _require(data, layout_type):
    if not isinstance(data, PooledObservations) or not isinstance(data.layout, layout_type):
        raise TypeError(f"expected pooled data with {layout_type.__name__}")


def loglik_general(p_t, data: PooledObservations) -> float:
    """Sum of Bernoulli log-masses, one per pool."""
    _require(data, GeneralLayout)
    return likelihood_terms(data, compress=False).loglik_p(p_t)


def loglik_ideal(p_t, data: PooledObservations) -> float:
    _require(data, IdealLayout)
    return likelihood_terms(data).loglik_p(p_t)


def loglik_efficient_general(p_t, data: PooledObservations) -> float:
    """Binomial block of full-size pools plus a Bernoulli remainder pool, per time.

    Empty blocks (``n < m_star``) and absent remainder pools (``m_star`` divides
    ``n``) contribute exactly zero.
    """
    _require(data, EfficientLayout)
    return likelihood_terms(data).loglik_p(p_t)


def loglik_individual(p_t, data: IndividualObservations) -> float:
    if not isinstance(data, IndividualObservations):
        raise TypeError("expected IndividualObservations")
    return likelihood_terms(data).loglik_p(p_t)


def loglik(p_t, data) -> float:
    """Log-likelihood under whichever sampling model matches ``data``."""
    return likelihood_terms(data).loglik_p(p_t)


def expand_to_general(data: PooledObservations) -> PooledObservations:
    """Pool-by-pool representation of an ideal or efficient dataset.

    Which pools in a block are positive is not recorded by the count layouts;
    the first ``y`` pools of each block are marked positive, which leaves the
    likelihood unchanged because pools in a block are exchangeable.
    """
    lay = data.layout
    if isinstance(lay, GeneralLayout):
        return data
    ti, sz, res = [], [], []
    if isinstance(lay, IdealLayout):
        blocks = [(i, int(k), int(m), int(y)) for i, (k, m, y) in enumerate(zip(lay.k, lay.m, lay.y))]
    else:
        blocks = []
        for i in range(lay.k.size):
            blocks.append((i, int(lay.k[i] - 1), int(lay.m_star[i]), int(lay.y1[i])))
            if lay.m_rem[i] > 0:
                blocks.append((i, 1, int(lay.m_rem[i]), int(lay.y2[i])))
    for i, k, m, y in blocks:
        ti += [i] * k
        sz += [m] * k
        res += [1] * y + [0] * (k - y)
    return PooledObservations(data.grid, GeneralLayout(ti, sz, res), data.n_per_time)
