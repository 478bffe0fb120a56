import math

import numpy as np
import pytest
from scipy import special

from poolprev import kernels
from poolprev.observation import LikelihoodTerms

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def _terms(rng, n_times=12, n_terms=40):
    tidx = rng.integers(0, n_times, n_terms)
    trials = rng.integers(1, 6, n_terms)
    size = rng.integers(1, 12, n_terms)
    succ = np.array([rng.integers(0, k + 1) for k in trials])
    return LikelihoodTerms.build(tidx, trials, size, succ)


def test_numpy_log1m_probit_matches_reference():
    f = np.linspace(-30, 60, 901)
    ref = special.log_ndtr(-f)
    np.testing.assert_allclose(kernels.np_log1m_probit(f), ref, rtol=1e-12, atol=1e-300)


def test_log1m_probit_left_tail_keeps_digits():
    # log(1 - Phi(f)) ~ -Phi(f) when Phi(f) is tiny
    f = np.array([-12.0])
    assert kernels.np_log1m_probit(f)[0] == pytest.approx(-special.ndtr(-12.0), rel=1e-10)


@needs_numba
def test_backends_agree_on_covariance():
    rng = np.random.default_rng(0)
    t1, t2 = np.sort(rng.uniform(0, 100, 30)), np.sort(rng.uniform(0, 100, 17))
    np.testing.assert_allclose(kernels.nb_sq_exp_cov(t1, t2, 0.7, 9.0), kernels.np_sq_exp_cov(t1, t2, 0.7, 9.0), rtol=1e-14)
    np.testing.assert_allclose(kernels.nb_sq_exp_cov_sym(t1, 0.7, 9.0), kernels.np_sq_exp_cov_sym(t1, 0.7, 9.0), rtol=1e-14)


@needs_numba
def test_backends_agree_on_log1m_probit():
    f = np.linspace(-40, 40, 2001)
    np.testing.assert_allclose(kernels.nb_log1m_probit(f), kernels.np_log1m_probit(f), rtol=1e-13, atol=1e-300)


@needs_numba
def test_backends_agree_on_likelihood():
    rng = np.random.default_rng(1)
    for _ in range(50):
        terms = _terms(rng)
        f = rng.normal(-1.5, 1.0, 12)
        a = kernels.nb_latent_loglik(f, *terms.args())
        b = kernels.np_latent_loglik(f, *terms.args())
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
        log1mp = np.log1p(-special.ndtr(f))
        assert kernels.nb_terms_loglik(log1mp, *terms.args()) == pytest.approx(
            kernels.np_terms_loglik(log1mp, *terms.args()), rel=1e-12, abs=1e-12
        )


@needs_numba
def test_backends_agree_on_boundaries():
    terms = LikelihoodTerms.build([0, 1], [2, 3], [3, 2], [1, 0])
    for log1mp in (np.array([0.0, -1.0]), np.array([-0.2, -math.inf])):
        assert kernels.nb_terms_loglik(log1mp, *terms.args()) == -math.inf
        assert kernels.np_terms_loglik(log1mp, *terms.args()) == -math.inf


def test_backend_flag_is_reported():
    from poolprev import _backend

    assert _backend.backend_name() in ("numba", "numpy")
