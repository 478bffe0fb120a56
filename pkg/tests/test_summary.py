import numpy as np
import pytest

from poolprev import gp, inference, summary
from poolprev.domain import IdealLayout, PooledObservations, TimeGrid


@pytest.fixture(scope="module")
def fitted():
    grid = TimeGrid([0.0, 10.0, 20.0, 30.0, 40.0], 40.0)
    data = PooledObservations(grid, IdealLayout([15] * 5, [3] * 5, [2, 3, 1, 4, 2]))
    draws = inference.run_mcmc(data, inference.SamplerConfig(seed=1, chains=2, warmup=300, draws=300))
    return data, draws


def test_observed_times_use_stored_draws(fitted):
    data, draws = fitted
    s = summary.summarize_curve(draws, data.grid, seed=0, max_draws=None)
    p = draws.prevalence().reshape(-1, 5)
    np.testing.assert_allclose(s.median, np.percentile(p, 50, axis=0), rtol=1e-12)
    np.testing.assert_allclose(s.lo95, np.percentile(p, 2.5, axis=0), rtol=1e-12)
    obs = summary.observed_summary(draws)
    np.testing.assert_allclose(obs.hi95, s.hi95, rtol=1e-12)


def test_interval_ordering_and_range(fitted):
    data, draws = fitted
    pred = summary.default_prediction_grid(data.grid, 200)
    assert len(pred) == 200 and pred.times[0] == 0.0 and pred.times[-1] == 40.0
    s = summary.summarize_curve(draws, pred, seed=3)
    assert np.all(s.lo95 <= s.median) and np.all(s.median <= s.hi95)
    assert np.all((s.lo95 >= 0) & (s.hi95 <= 1))


def test_far_prediction_widens_toward_prior(fitted):
    data, draws = fitted
    near = summary.summarize_curve(draws, np.array([20.0]), seed=1)
    far = summary.summarize_curve(draws, np.array([5000.0]), seed=1)
    assert far.hi95[0] - far.lo95[0] > near.hi95[0] - near.lo95[0]


def test_summary_is_seeded(fitted):
    data, draws = fitted
    a = summary.summarize_curve(draws, np.array([5.0, 15.0]), seed=4)
    b = summary.summarize_curve(draws, np.array([5.0, 15.0]), seed=4)
    assert np.array_equal(a.median, b.median)


def test_max_draws_thins_evenly():
    idx = summary._draw_indices(4000, 1000)
    assert idx.size == 1000 and idx[0] == 0 and idx[-1] == 3999
    assert summary._draw_indices(10, 1000).size == 10


def test_mae():
    s = summary.CurveSummary(np.arange(3.0), np.array([0.1, 0.2, 0.3]), np.zeros(3), np.ones(3))
    assert summary.curve_mae(s, [0.1, 0.1, 0.1]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        summary.curve_mae(s, [0.1])
