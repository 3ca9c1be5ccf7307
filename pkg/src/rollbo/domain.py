"""Axis-aligned box domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Compact search domain with per-dimension bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, rtol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        pad = rtol * self.width
        return bool(np.all(x >= self.lower - pad) and np.all(x <= self.upper + pad))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def uniform(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """n box-uniform points, shape (n, dim)."""
        u = rng.random((n, self.dim))
        return self.lower + u * self.width

    def on_boundary(self, x: np.ndarray, rtol: float = 1e-9) -> bool:
        """True if any coordinate sits on a bound (within rtol of the width)."""
        x = np.asarray(x, dtype=float)
        tol = rtol * self.width
        return bool(np.any(x - self.lower <= tol) or np.any(self.upper - x <= tol))
