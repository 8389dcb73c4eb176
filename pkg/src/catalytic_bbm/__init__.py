"""Exact simulation and analytics for branching Brownian motion with a point catalyst at 0."""

from .analytics import (
    MixingSample,
    ModelParams,
    SpeedClass,
    delta_lambda,
    expected_count,
    expected_population,
    factorial_second_moment,
    mu_measure,
    pi_measure,
)
from .errors import CatalyticBBMError, DomainError, NumericalError, ValidationError
from .intervals import IntervalSet
from .rng import RngStream, derive_seed
from .simulator import CountingWindow, Ensemble, SimConfig, run_ensemble, run_replicate

__version__ = "0.1.0"
