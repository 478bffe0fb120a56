"""Numeric inner loops used by the sampler.

Every kernel has a pure-numpy implementation (``np_*``) and, when numba is
available, an ``@njit`` twin (``nb_*``). The public names (``sq_exp_cov``,
``sq_exp_cov_sym``, ``terms_loglik``, ``latent_loglik``, ``log1m_probit``) are bound to one of the
two at import time according to :mod:`poolprev._backend`.

Likelihood terms are stored in a flat "binomial block" form shared by all
sampling models: term ``j`` says that at time ``tidx[j]`` there were
``trials[j]`` pools of ``size[j]`` individuals each, ``succ[j]`` of which were
positive, and ``logcoef[j]`` is the log binomial coefficient of that block.
A Bernoulli pool is a block with one trial and a zero coefficient.
"""

import math

import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# beyond this, erfc underflows soon; use the Mills-ratio asymptotic series
_TAIL = 30.0


# -- pure numpy ---------------------------------------------------------------


def np_sq_exp_cov(t1, t2, sigma, ell):
    d = t1[:, None] - t2[None, :]
    return sigma * sigma * np.exp(-(d * d) / (2.0 * ell * ell))


def np_sq_exp_cov_sym(t, sigma, ell):
    return np_sq_exp_cov(t, t, sigma, ell)


def np_log1m_probit(f):
    """log(1 - Phi(f)), accurate in both tails."""
    from scipy.special import erfc

    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    neg = f < 0.0
    # Phi(f) is small here, so log1p keeps the digits
    out[neg] = np.log1p(-0.5 * erfc(-f[neg] * _SQRT1_2))
    far = f > _TAIL
    mid = ~neg & ~far
    out[mid] = np.log(0.5 * erfc(f[mid] * _SQRT1_2))
    out[far] = _np_log_upper_tail(f[far])
    return out


def _np_log_upper_tail(x):
    r = 1.0 / (x * x)
    series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - 105.0 * r)))
    return -0.5 * x * x - _LOG_SQRT_2PI - np.log(x) + np.log(series)


def np_terms_loglik(log1mp, tidx, trials, size, succ, logcoef):
    lq = log1mp[tidx]
    a = size * lq
    fail = trials - succ
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pos = np.where(succ > 0, succ * np.log(-np.expm1(a)), 0.0)
        log_neg = np.where(fail > 0, fail * a, 0.0)
    total = float(np.sum(log_pos + log_neg + logcoef))
    if math.isnan(total):
        return -math.inf
    return total


def np_latent_loglik(f, tidx, trials, size, succ, logcoef):
    return np_terms_loglik(np_log1m_probit(f), tidx, trials, size, succ, logcoef)


# -- numba --------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def nb_sq_exp_cov(t1, t2, sigma, ell):
        n1 = t1.shape[0]
        n2 = t2.shape[0]
        out = np.empty((n1, n2))
        s2 = sigma * sigma
        inv = 1.0 / (2.0 * ell * ell)
        for i in range(n1):
            for j in range(n2):
                d = t1[i] - t2[j]
                out[i, j] = s2 * math.exp(-d * d * inv)
        return out

    @njit(cache=True)
    def nb_sq_exp_cov_sym(t, sigma, ell):
        n = t.shape[0]
        out = np.empty((n, n))
        s2 = sigma * sigma
        inv = 1.0 / (2.0 * ell * ell)
        for i in range(n):
            out[i, i] = s2
            for j in range(i):
                d = t[i] - t[j]
                v = s2 * math.exp(-d * d * inv)
                out[i, j] = v
                out[j, i] = v
        return out

    @njit(cache=True)
    def _nb_log1m_probit_scalar(x):
        if x < 0.0:
            return math.log1p(-0.5 * math.erfc(-x * _SQRT1_2))
        if x > _TAIL:
            r = 1.0 / (x * x)
            series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - 105.0 * r)))
            return -0.5 * x * x - _LOG_SQRT_2PI - math.log(x) + math.log(series)
        return math.log(0.5 * math.erfc(x * _SQRT1_2))

    @njit(cache=True)
    def nb_log1m_probit(f):
        out = np.empty(f.shape[0])
        for i in range(f.shape[0]):
            out[i] = _nb_log1m_probit_scalar(f[i])
        return out

    @njit(cache=True)
    def nb_terms_loglik(log1mp, tidx, trials, size, succ, logcoef):
        total = 0.0
        for j in range(tidx.shape[0]):
            a = size[j] * log1mp[tidx[j]]
            if succ[j] > 0:
                pos = -math.expm1(a)
                if pos <= 0.0:
                    return -math.inf
                total += succ[j] * math.log(pos)
            fail = trials[j] - succ[j]
            if fail > 0:
                if a == -math.inf:
                    return -math.inf
                total += fail * a
            total += logcoef[j]
        return total

    @njit(cache=True)
    def nb_latent_loglik(f, tidx, trials, size, succ, logcoef):
        total = 0.0
        for j in range(tidx.shape[0]):
            a = size[j] * _nb_log1m_probit_scalar(f[tidx[j]])
            if succ[j] > 0:
                pos = -math.expm1(a)
                if pos <= 0.0:
                    return -math.inf
                total += succ[j] * math.log(pos)
            fail = trials[j] - succ[j]
            if fail > 0:
                if a == -math.inf:
                    return -math.inf
                total += fail * a
            total += logcoef[j]
        return total


if USE_NUMBA:
    sq_exp_cov = nb_sq_exp_cov
    sq_exp_cov_sym = nb_sq_exp_cov_sym
    log1m_probit = nb_log1m_probit
    terms_loglik = nb_terms_loglik
    latent_loglik = nb_latent_loglik
else:
    sq_exp_cov = np_sq_exp_cov
    sq_exp_cov_sym = np_sq_exp_cov_sym
    log1m_probit = np_log1m_probit
    terms_loglik = np_terms_loglik
    latent_loglik = np_latent_loglik
