"""Synthetic benchmark objectives with documented minima.

Standard global-optimization test functions on their conventional boxes.
``f_opt`` is the objective value at the frozen minimizer ``x_opt`` (for
Schwefel the per-coordinate minimizer solves sin(sqrt t) + sqrt(t)
cos(sqrt t)/2 = 0 near 420.97, so the usual 418.9829*d offset leaves a
small positive residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..domain import Box


@dataclass(frozen=True)
class TestFunction:
    name: str
    dim: int
    box: Box
    f_opt: float
    x_opt: np.ndarray
    fn: Callable[[np.ndarray], float]

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return float(self.fn(x))


def _gramacy_lee(x):
    t = x[0]
    return math.sin(10.0 * math.pi * t) / (2.0 * t) + (t - 1.0) ** 4


def _rosenbrock(x):
    return (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2


def _branin_hoo(x):
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    s = 10.0
    t = 1.0 / (8.0 * math.pi)
    return (x[1] - b * x[0] ** 2 + c * x[0] - 6.0) ** 2 \
        + s * (1.0 - t) * math.cos(x[0]) + s


def _goldstein_price(x):
    x1, x2 = x
    a = 1.0 + (x1 + x2 + 1.0) ** 2 * (
        19.0 - 14.0 * x1 + 3.0 * x1**2 - 14.0 * x2 + 6.0 * x1 * x2 + 3.0 * x2**2
    )
    b = 30.0 + (2.0 * x1 - 3.0 * x2) ** 2 * (
        18.0 - 32.0 * x1 + 12.0 * x1**2 + 48.0 * x2 - 36.0 * x1 * x2 + 27.0 * x2**2
    )
    return a * b


def _six_hump_camel(x):
    x1, x2 = x
    return (4.0 - 2.1 * x1**2 + x1**4 / 3.0) * x1**2 + x1 * x2 \
        + (-4.0 + 4.0 * x2**2) * x2**2


_SCHWEFEL_T = 420.96874635998194  # argmax of t*sin(sqrt(t)) on [0, 500]


def _schwefel4d(x):
    return 418.9829 * 4 - float(np.sum(x * np.sin(np.sqrt(np.abs(x)))))


_REGISTRY: dict[str, TestFunction] = {}


def _register(name, dim, lower, upper, f_opt, x_opt, fn):
    box = Box(np.full(dim, float(lower)) if np.isscalar(lower) else np.asarray(lower, float),
              np.full(dim, float(upper)) if np.isscalar(upper) else np.asarray(upper, float))
    _REGISTRY[name] = TestFunction(
        name=name, dim=dim, box=box, f_opt=float(f_opt),
        x_opt=np.asarray(x_opt, dtype=float), fn=fn,
    )


_register("gramacy_lee", 1, 0.5, 2.5,
          -0.86901113498949978, [0.548563444527605], _gramacy_lee)
_register("rosenbrock", 2, -2.048, 2.048, 0.0, [1.0, 1.0], _rosenbrock)
_register("branin_hoo", 2, [-5.0, 0.0], [10.0, 15.0],
          5.0 / (4.0 * math.pi), [-math.pi, 12.275], _branin_hoo)
_register("goldstein_price", 2, -2.0, 2.0, 3.0, [0.0, -1.0], _goldstein_price)
_register("six_hump_camel", 2, [-3.0, -2.0], [3.0, 2.0],
          -1.0316284534898774, [0.08984201368301331, -0.7126564032704135],
          _six_hump_camel)
_register("schwefel4d", 4, -500.0, 500.0,
          418.9829 * 4 - 4 * (_SCHWEFEL_T * math.sin(math.sqrt(_SCHWEFEL_T))),
          [_SCHWEFEL_T] * 4, _schwefel4d)


def get(name: str) -> TestFunction:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown test function {name!r}; available: {sorted(_REGISTRY)}"
        ) from None


def names() -> list[str]:
    return sorted(_REGISTRY)
