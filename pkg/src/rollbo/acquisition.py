"""Myopic acquisition functions over GP posterior moments.

Expected improvement for minimization:

    z     = (f_best - mu - xi) / sd
    g(z)  = z*Phi(z) + phi(z),   g'(z) = Phi(z),   g''(z) = phi(z)
    ei    = sd * g(z)

together with its spatial gradient and Hessian and the mixed derivatives
with respect to one observation's value/location (through the posterior
moment sensitivities) and to the incumbent itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError
from .gp import MomentSensitivity, PosteriorMoments

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# sigma^-1 factors in the derivative stack refuse to evaluate below this sd
SD_FLOOR = 1e-12


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


def _norm_pdf(z: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


@dataclass(frozen=True)
class EIQuantities:
    """Standardized improvement and the g-function stack at one point."""

    z: float
    g: float
    gp1: float
    gp2: float
    xi: float
    value: float


def ei_quantities(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> EIQuantities:
    sd = moments.sd
    if sd <= 0.0:
        raise DegenerateVarianceError("ei_quantities requires sd > 0")
    z = (f_best - moments.mean - xi) / sd
    gp1 = _norm_cdf(z)
    gp2 = _norm_pdf(z)
    g = max(z * gp1 + gp2, 0.0)
    return EIQuantities(z=z, g=g, gp1=gp1, gp2=gp2, xi=xi, value=sd * g)


def ei(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> float:
    """Expected improvement; deterministic limit max(f_best - mu - xi, 0) at sd = 0."""
    if moments.sd <= 0.0:
        return max(f_best - moments.mean - xi, 0.0)
    return ei_quantities(moments, f_best, xi).value


def _z_spatial(moments: PosteriorMoments, q: EIQuantities):
    sd = moments.sd
    z_i = (-moments.grad_mean - moments.grad_sd * q.z) / sd
    return z_i


def ei_grad(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> np.ndarray:
    """Spatial gradient of expected improvement."""
    if moments.sd < SD_FLOOR:
        raise DegenerateVarianceError("ei_grad requires sd >= 1e-12")
    q = ei_quantities(moments, f_best, xi)
    z_i = _z_spatial(moments, q)
    return moments.grad_sd * q.g + moments.sd * q.gp1 * z_i


def ei_hess(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> np.ndarray:
    """Spatial Hessian of expected improvement (symmetric)."""
    if moments.sd < SD_FLOOR:
        raise DegenerateVarianceError("ei_hess requires sd >= 1e-12")
    q = ei_quantities(moments, f_best, xi)
    sd = moments.sd
    z_i = _z_spatial(moments, q)
    z_ij = (
        -moments.hess_mean
        - moments.hess_sd * q.z
        - np.outer(moments.grad_sd, z_i)
        - np.outer(z_i, moments.grad_sd)
    ) / sd
    H = (
        moments.hess_sd * q.g
        + (
            np.outer(moments.grad_sd, z_i)
            + np.outer(z_i, moments.grad_sd)
            + sd * z_ij
        )
        * q.gp1
        + sd * q.gp2 * np.outer(z_i, z_i)
    )
    return 0.5 * (H + H.T)


def ei_value_grad_hess(moments: PosteriorMoments, f_best: float, xi: float = 0.0):
    """(ei, grad, hess) in one pass; shares the z-stack across the three."""
    if moments.sd < SD_FLOOR:
        raise DegenerateVarianceError("ei derivative stack requires sd >= 1e-12")
    q = ei_quantities(moments, f_best, xi)
    sd = moments.sd
    z_i = _z_spatial(moments, q)
    grad = moments.grad_sd * q.g + sd * q.gp1 * z_i
    z_ij = (
        -moments.hess_mean
        - moments.hess_sd * q.z
        - np.outer(moments.grad_sd, z_i)
        - np.outer(z_i, moments.grad_sd)
    ) / sd
    H = (
        moments.hess_sd * q.g
        + (np.outer(moments.grad_sd, z_i) + np.outer(z_i, moments.grad_sd) + sd * z_ij)
        * q.gp1
        + sd * q.gp2 * np.outer(z_i, z_i)
    )
    return q.value, grad, 0.5 * (H + H.T)


def ei_mixed_data(
    moments: PosteriorMoments,
    sens: MomentSensitivity,
    f_best: float,
    xi: float = 0.0,
    f_best_dot: float = 0.0,
):
    """Derivative of (ei, ei_grad) with respect to one scalar data perturbation.

    ``sens`` carries the posterior moment sensitivities for that perturbation
    and ``f_best_dot`` is 1 when the perturbed observation is the incumbent
    (the perturbation then also moves f_best), else 0.
    """
    if moments.sd < SD_FLOOR:
        raise DegenerateVarianceError("ei_mixed_data requires sd >= 1e-12")
    q = ei_quantities(moments, f_best, xi)
    sd = moments.sd
    z_i = _z_spatial(moments, q)
    z_dot = (f_best_dot - sens.mu_dot - sens.sd_dot * q.z) / sd
    z_dot_i = (
        -sens.grad_mu_dot
        - sens.grad_sd_dot * q.z
        - moments.grad_sd * z_dot
        - sens.sd_dot * z_i
    ) / sd
    alpha_dot = sens.sd_dot * q.g + sd * q.gp1 * z_dot
    alpha_dot_grad = (
        sens.grad_sd_dot * q.g
        + moments.grad_sd * q.gp1 * z_dot
        + sens.sd_dot * q.gp1 * z_i
        + sd * q.gp2 * z_dot * z_i
        + sd * q.gp1 * z_dot_i
    )
    return float(alpha_dot), alpha_dot_grad


def poi(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> float:
    """Probability of improvement Phi(z)."""
    if moments.sd <= 0.0:
        raise DegenerateVarianceError("poi requires sd > 0")
    z = (f_best - moments.mean - xi) / moments.sd
    return _norm_cdf(z)


def poi_grad(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> np.ndarray:
    if moments.sd < SD_FLOOR:
        raise DegenerateVarianceError("poi_grad requires sd >= 1e-12")
    z = (f_best - moments.mean - xi) / moments.sd
    z_i = (-moments.grad_mean - moments.grad_sd * z) / moments.sd
    return _norm_pdf(z) * z_i


def poi_hess(moments: PosteriorMoments, f_best: float, xi: float = 0.0) -> np.ndarray:
    if moments.sd < SD_FLOOR:
        raise DegenerateVarianceError("poi_hess requires sd >= 1e-12")
    sd = moments.sd
    z = (f_best - moments.mean - xi) / sd
    z_i = (-moments.grad_mean - moments.grad_sd * z) / sd
    z_ij = (
        -moments.hess_mean
        - moments.hess_sd * z
        - np.outer(moments.grad_sd, z_i)
        - np.outer(z_i, moments.grad_sd)
    ) / sd
    H = _norm_pdf(z) * (z_ij - z * np.outer(z_i, z_i))
    return 0.5 * (H + H.T)


def ucb(moments: PosteriorMoments, beta_ucb: float) -> float:
    """Minimization-form confidence bound -mu + sqrt(beta)*sd (maximized)."""
    return -moments.mean + math.sqrt(beta_ucb) * moments.sd


def ucb_grad(moments: PosteriorMoments, beta_ucb: float) -> np.ndarray:
    return -moments.grad_mean + math.sqrt(beta_ucb) * moments.grad_sd


def ucb_hess(moments: PosteriorMoments, beta_ucb: float) -> np.ndarray:
    return -moments.hess_mean + math.sqrt(beta_ucb) * moments.hess_sd
