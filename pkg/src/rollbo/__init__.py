"""Rollout (lookahead) acquisition functions over Gaussian process
surrogates, with variance-reduced Monte Carlo value and gradient estimates
and a benchmark harness."""

from . import acquisition, bench, gp, kernels, optimizer, rollout, sampler
from .domain import Box
from .errors import (
    DegenerateVarianceError,
    EstimatorDegradedError,
    NotPositiveDefiniteError,
    UnsupportedDimensionError,
)

__version__ = "0.1.0"

__all__ = [
    "acquisition", "bench", "gp", "kernels", "optimizer", "rollout", "sampler",
    "Box",
    "DegenerateVarianceError", "EstimatorDegradedError",
    "NotPositiveDefiniteError", "UnsupportedDimensionError",
    "__version__",
]
