"""Matérn 5/2 kernel with ARD lengthscales and first/second spatial derivatives.

The kernel is a radial profile of the scaled distance,

    k(x, y) = psi(rho),   rho = ||r||,   r_k = (x_k - y_k) / ell_k,

with

    psi(rho)   = amp * (1 + sqrt5*rho + (5/3)*rho^2) * exp(-sqrt5*rho)
    psi'(rho)  = -(5/3) * amp * rho * (1 + sqrt5*rho)  * exp(-sqrt5*rho)
    psi''(rho) = -(5/3) * amp * (1 + sqrt5*rho - 5*rho^2) * exp(-sqrt5*rho)

Derivatives in x follow the radial chain rule; the apparently singular factors
psi'(rho)/rho and [psi''(rho) - psi'(rho)/rho]/rho^2 have smooth closed forms
for this profile, used below the RHO_EPS branch threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT5 = math.sqrt(5.0)

# Below this scaled distance the closed-form rho->0 limits replace the
# general expressions that divide by rho.
RHO_EPS = 1e-8
# The Hessian cross coefficient subtracts psi'' - psi'/rho, which is pure
# cancellation near 0; its branch switches earlier. Both branches are
# algebraically identical for this profile, so the handover is exact.
RHO_EPS_HESS = 1e-3


@dataclass(frozen=True)
class KernelParams:
    """Signal variance and per-dimension lengthscales of a Matérn 5/2 kernel."""

    amplitude: float
    lengthscales: np.ndarray
    kind: str = "matern52"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.kind != "matern52":
            raise ValueError(f"unsupported kernel kind: {self.kind!r}")
        if not (self.amplitude > 0.0):
            raise ValueError("amplitude must be positive")
        if ls.ndim != 1 or not np.all(ls > 0.0):
            raise ValueError("lengthscales must be a 1-d array of positive values")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class RadialProfile:
    """psi and its first two rho-derivatives at one scaled distance."""

    psi: float
    dpsi: float
    ddpsi: float


def scaled_distance(x: np.ndarray, y: np.ndarray, params: KernelParams):
    """Return (rho, r) with r the lengthscale-scaled difference vector."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (params.dim,) or y.shape != (params.dim,):
        raise ValueError(
            f"point dimension mismatch: got {x.shape} and {y.shape}, kernel has d={params.dim}"
        )
    r = (x - y) / params.lengthscales
    rho = float(np.sqrt(np.dot(r, r)))
    return rho, r


def radial_profile(rho: float, params: KernelParams) -> RadialProfile:
    """Evaluate psi, psi', psi'' at a scaled distance rho >= 0."""
    a = params.amplitude
    e = math.exp(-SQRT5 * rho)
    psi = a * (1.0 + SQRT5 * rho + (5.0 / 3.0) * rho * rho) * e
    dpsi = -(5.0 / 3.0) * a * rho * (1.0 + SQRT5 * rho) * e
    ddpsi = -(5.0 / 3.0) * a * (1.0 + SQRT5 * rho - 5.0 * rho * rho) * e
    return RadialProfile(psi=psi, dpsi=dpsi, ddpsi=ddpsi)


def _dpsi_over_rho(rho: float, amplitude: float) -> float:
    # smooth closed form of psi'(rho)/rho
    return -(5.0 / 3.0) * amplitude * (1.0 + SQRT5 * rho) * math.exp(-SQRT5 * rho)


def _radial_hess_coeff(rho: float, amplitude: float) -> float:
    # smooth closed form of [psi''(rho) - psi'(rho)/rho] / rho^2
    return (25.0 / 3.0) * amplitude * math.exp(-SQRT5 * rho)


def value(x: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    """k(x, y)."""
    rho, _ = scaled_distance(x, y, params)
    return radial_profile(rho, params).psi


def grad(x: np.ndarray, y: np.ndarray, params: KernelParams) -> np.ndarray:
    """dk/dx as a d-vector; antisymmetric under swapping x and y."""
    rho, r = scaled_distance(x, y, params)
    u = r / params.lengthscales
    if rho < RHO_EPS:
        coeff = _dpsi_over_rho(rho, params.amplitude)
    else:
        coeff = radial_profile(rho, params).dpsi / rho
    return coeff * u


def hess(x: np.ndarray, y: np.ndarray, params: KernelParams) -> np.ndarray:
    """d^2 k / dx_i dx_j as a symmetric d x d matrix (rho->0 limit at x == y)."""
    rho, r = scaled_distance(x, y, params)
    ls = params.lengthscales
    u = r / ls
    if rho < RHO_EPS_HESS:
        cross = _radial_hess_coeff(rho, params.amplitude)
        diag = _dpsi_over_rho(rho, params.amplitude)
    else:
        prof = radial_profile(rho, params)
        diag = prof.dpsi / rho
        cross = (prof.ddpsi - diag) / (rho * rho)
    return cross * np.outer(u, u) + diag * np.diag(1.0 / (ls * ls))


# --- vectorized rows against a set of points (used by the GP layer) ---------


def value_row(x: np.ndarray, X: np.ndarray, params: KernelParams) -> np.ndarray:
    """k(x, X_p) for all rows X_p of X; shape (m,)."""
    u = (x[None, :] - X) / params.lengthscales[None, :]
    rho = np.sqrt(np.einsum("pk,pk->p", u, u))
    e = np.exp(-SQRT5 * rho)
    return params.amplitude * (1.0 + SQRT5 * rho + (5.0 / 3.0) * rho * rho) * e


def rows_upto(
    x: np.ndarray, X: np.ndarray, params: KernelParams, order: int
):
    """Kernel row and derivative rows at x against all rows of X.

    Returns (k, G, H) where k has shape (m,), G is dk/dx with shape (m, d)
    and H is d^2k/dx^2 with shape (m, d, d); G and H are None when the
    requested order is below 1 or 2. Uses the smooth closed forms, so rows
    through coincident points are well defined.
    """
    ls = params.lengthscales
    u = (x[None, :] - X) / ls[None, :]
    rho = np.sqrt(np.einsum("pk,pk->p", u, u))
    e = np.exp(-SQRT5 * rho)
    k = params.amplitude * (1.0 + SQRT5 * rho + (5.0 / 3.0) * rho * rho) * e
    if order < 1:
        return k, None, None
    q = -(5.0 / 3.0) * params.amplitude * (1.0 + SQRT5 * rho) * e  # psi'/rho
    ul = u / ls[None, :]
    G = q[:, None] * ul
    if order < 2:
        return k, G, None
    s = (25.0 / 3.0) * params.amplitude * e  # [psi'' - psi'/rho] / rho^2
    H = s[:, None, None] * np.einsum("pi,pj->pij", ul, ul)
    H += q[:, None, None] * np.diag(1.0 / (ls * ls))[None, :, :]
    return k, G, H


def third_rows(x: np.ndarray, X: np.ndarray, params: KernelParams) -> np.ndarray:
    """d^3 k / dx_i dx_j dx_l rows against all rows of X; shape (m, d, d, d).

    The Matérn 5/2 third derivative is continuous everywhere (the cubic
    term of the radial profile vanishes); with s = [psi''-psi'/rho]/rho^2,

        k_{,ijl} = s [ d_il ul_j + d_jl ul_i + d_ij ul_l ] / l^2
                 - sqrt5 s ul_i ul_j ul_l / rho

    where the last factor tends to zero with rho.
    """
    ls = params.lengthscales
    u = (x[None, :] - X) / ls[None, :]
    rho = np.sqrt(np.einsum("pk,pk->p", u, u))
    s = (25.0 / 3.0) * params.amplitude * np.exp(-SQRT5 * rho)
    ul = u / ls[None, :]
    d = ls.size
    scaled_eye = np.eye(d) / (ls * ls)[None, :]
    T = np.einsum("p,il,pj->pijl", s, scaled_eye, ul)
    T += np.einsum("p,jl,pi->pijl", s, scaled_eye, ul)
    T += np.einsum("p,ij,pl->pijl", s, scaled_eye, ul)
    inv_rho = np.where(rho < RHO_EPS, 0.0, 1.0 / np.maximum(rho, RHO_EPS))
    T -= SQRT5 * np.einsum("p,pi,pj,pl->pijl", s * inv_rho, ul, ul, ul)
    return T


def gram(X: np.ndarray, params: KernelParams) -> np.ndarray:
    """Kernel matrix k(X_p, X_q); shape (m, m)."""
    u = (X[:, None, :] - X[None, :, :]) / params.lengthscales[None, None, :]
    rho = np.sqrt(np.einsum("pqk,pqk->pq", u, u))
    e = np.exp(-SQRT5 * rho)
    return params.amplitude * (1.0 + SQRT5 * rho + (5.0 / 3.0) * rho * rho) * e


def gram_lengthscale_dots(X: np.ndarray, params: KernelParams) -> np.ndarray:
    """dK/d(log ell_k) for each lengthscale; shape (d, m, m).

    Uses dk/d(log ell_k) = -(psi'(rho)/rho) * r_k^2 with the smooth
    psi'/rho form, so coincident points contribute zero.
    """
    u = (X[:, None, :] - X[None, :, :]) / params.lengthscales[None, None, :]
    rho = np.sqrt(np.einsum("pqk,pqk->pq", u, u))
    q = -(5.0 / 3.0) * params.amplitude * (1.0 + SQRT5 * rho) * np.exp(-SQRT5 * rho)
    return np.einsum("pq,pqk->kpq", -q, u * u)
