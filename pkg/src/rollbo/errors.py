"""Exception types shared across the library."""

from __future__ import annotations


class NotPositiveDefiniteError(RuntimeError):
    """Covariance factorization failed even after the jitter escalation."""

    def __init__(self, message: str, jitter: float = 0.0):
        super().__init__(message)
        self.jitter = jitter


class DegenerateVarianceError(RuntimeError):
    """Posterior standard deviation too small for sigma^-1-dependent derivatives."""


class UnsupportedDimensionError(ValueError):
    """Requested dimension exceeds the low-discrepancy direction-number table."""


class EstimatorDegradedError(RuntimeError):
    """Too many trajectories were flagged for the estimate to be trusted."""

    def __init__(self, message: str, n_flagged: int = 0, n_total: int = 0):
        super().__init__(message)
        self.n_flagged = n_flagged
        self.n_total = n_total
