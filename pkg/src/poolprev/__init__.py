"""Bayesian estimation of time-varying prevalence from pooled test results.

Prevalence is a latent Gaussian process pushed through a
probit link; pools of ``m`` individuals test positive with probability
``1 - (1 - p)^m``.
"""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    DataError,
    EfficientLayout,
    GeneralLayout,
    IdealLayout,
    IndividualObservations,
    IndividualRecord,
    IndividualResults,
    PooledObservations,
    TimeGrid,
    validate_dataset,
)
from .gp import GpHyperparams, PriorConfig, fit_lengthscale_prior  # noqa: E402
from .inference import PosteriorDraws, SamplerConfig, run_mcmc  # noqa: E402
from .observation import invert_pool_probability, loglik, pool_probability  # noqa: E402
from .summary import CurveSummary, summarize_curve  # noqa: E402
from .diagnostics import diagnose  # noqa: E402

__all__ = [
    "CurveSummary",
    "DataError",
    "EfficientLayout",
    "GeneralLayout",
    "GpHyperparams",
    "IdealLayout",
    "IndividualObservations",
    "IndividualRecord",
    "IndividualResults",
    "PooledObservations",
    "PosteriorDraws",
    "PriorConfig",
    "SamplerConfig",
    "TimeGrid",
    "diagnose",
    "fit_lengthscale_prior",
    "invert_pool_probability",
    "loglik",
    "pool_probability",
    "run_mcmc",
    "summarize_curve",
    "validate_dataset",
]
