"""Gaussian process posterior with analytic spatial and data derivatives.

The state keeps a lower Cholesky factor of K + diag(noise) in a preallocated
buffer so that conditioning on one more observation is an O(m^2) Schur
append instead of an O(m^3) refit. Fantasy observations (sampled, not
measured) are appended noiselessly and stay mutable for the data-derivative
machinery; real observations are immutable.

Derivative conventions: grad_* are d/dx of the posterior moments at the
query point; "dot" quantities are derivatives with respect to one fantasy
observation's value or one coordinate of its location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dtrtrs
from scipy.optimize import minimize

from . import kernels
from .errors import DegenerateVarianceError, NotPositiveDefiniteError
from .kernels import KernelParams

# sigma^-1-dependent derivatives refuse to evaluate below this sd
SD_DERIV_FLOOR = 1e-12

_LOG_HYPER_BOUNDS = (math.log(1e-3), math.log(1e3))


def _chol_with_jitter(A: np.ndarray, amplitude: float):
    """Cholesky of A, escalating a diagonal jitter 1e-10*amplitude by 10x
    up to five times before giving up."""
    jitters = [0.0] + [1e-10 * amplitude * 10.0**k for k in range(5)]
    last = 0.0
    for jit in jitters:
        last = jit
        try:
            L = np.linalg.cholesky(A + jit * np.eye(A.shape[0]) if jit else A)
            return L, jit
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(
        f"covariance not positive definite after jitter {last:.3e}", jitter=last
    )


@dataclass(frozen=True)
class Dataset:
    """Sample locations (rows of X), observations, and the running incumbent."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if X.size == 0:
            X = X.reshape(0, max(X.shape[-1], 1) if X.ndim == 2 else 1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have the same number of observations")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.y.size

    @property
    def f_best(self) -> float:
        return float(self.y.min()) if self.y.size else math.inf


@dataclass(frozen=True)
class GPState:
    """Immutable GP posterior state over a dataset.

    ``chol_buf`` holds the lower factor of K + diag(noise_diag) (+ jitter)
    in its leading m x m block; ``c`` solves that matrix against y - mean.
    Observations with index >= n_base are fantasies: noiseless and mutable.
    """

    data: Dataset
    params: KernelParams
    noise: float
    prior_mean: float
    chol_buf: np.ndarray
    c: np.ndarray
    noise_diag: np.ndarray
    n_base: int
    jitter: float

    @property
    def m(self) -> int:
        return self.data.m

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def L(self) -> np.ndarray:
        """Active m x m lower Cholesky block (read-only view)."""
        return self.chol_buf[: self.m, : self.m]


def _solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    if L.shape[0] == 0:
        return np.zeros_like(b)
    x, info = dtrtrs(L, b, lower=1, trans=0)
    if info != 0:
        return solve_triangular(L, b, lower=True, check_finite=False)
    return x


def _solve_upper(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    if L.shape[0] == 0:
        return np.zeros_like(b)
    x, info = dtrtrs(L, b, lower=1, trans=1)
    if info != 0:
        return solve_triangular(L, b, lower=True, trans="T", check_finite=False)
    return x


def fit(
    X: np.ndarray,
    y: np.ndarray,
    params: KernelParams,
    noise: float,
    prior_mean: float = 0.0,
    extra_capacity: int = 8,
) -> GPState:
    """Factor the training covariance and solve the mean weights."""
    if noise < 0.0:
        raise ValueError("noise variance must be nonnegative")
    data = Dataset(X=np.asarray(X, dtype=float).reshape(-1, params.dim), y=y)
    m = data.m
    noise_diag = np.full(m, float(noise))
    A = kernels.gram(data.X, params) + np.diag(noise_diag) if m else np.zeros((0, 0))
    if m:
        L, jit = _chol_with_jitter(A, params.amplitude)
    else:
        L, jit = np.zeros((0, 0)), 0.0
    cap = m + max(extra_capacity, 1)
    buf = np.zeros((cap, cap))
    buf[:m, :m] = L
    c = _solve_upper(L, _solve_lower(L, data.y - prior_mean))
    return GPState(
        data=data,
        params=params,
        noise=float(noise),
        prior_mean=float(prior_mean),
        chol_buf=buf,
        c=c,
        noise_diag=noise_diag,
        n_base=m,
        jitter=jit,
    )


@dataclass(frozen=True)
class PosteriorMoments:
    """Posterior moments at one query point, with solved workspace vectors.

    ``dvec`` solves A d = k_Xx and ``W`` solves A w^(i) = k_Xx,i; both are
    reused by the data-derivative formulas.
    """

    mean: float
    sd: float
    grad_mean: np.ndarray | None = None
    grad_sd: np.ndarray | None = None
    hess_mean: np.ndarray | None = None
    hess_sd: np.ndarray | None = None
    kvec: np.ndarray | None = None
    dvec: np.ndarray | None = None
    W: np.ndarray | None = None
    G: np.ndarray | None = None
    H: np.ndarray | None = None


def posterior(state: GPState, x: np.ndarray, order: int = 0) -> PosteriorMoments:
    """Posterior mean/sd at x with spatial derivatives up to ``order``."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"query point must have shape ({state.dim},)")
    amp = state.params.amplitude
    d = state.dim
    if state.m == 0:
        zeros = np.zeros(d)
        zmat = np.zeros((d, d))
        return PosteriorMoments(
            mean=state.prior_mean,
            sd=math.sqrt(amp),
            grad_mean=zeros if order >= 1 else None,
            grad_sd=zeros.copy() if order >= 1 else None,
            hess_mean=zmat if order >= 2 else None,
            hess_sd=zmat.copy() if order >= 2 else None,
            kvec=np.zeros(0),
            dvec=np.zeros(0) if order >= 1 else None,
            W=np.zeros((0, d)) if order >= 1 else None,
            G=np.zeros((0, d)) if order >= 1 else None,
            H=np.zeros((0, d, d)) if order >= 2 else None,
        )

    k, G, H = kernels.rows_upto(x, state.data.X, state.params, order)
    L = state.L
    if order == 0:
        t0 = _solve_lower(L, k)
        var = amp - float(t0 @ t0)
        sd = math.sqrt(var) if var > 0.0 else 0.0
        mean = state.prior_mean + float(k @ state.c)
        return PosteriorMoments(mean=mean, sd=sd, kvec=k)

    T = _solve_lower(L, np.concatenate([k[:, None], G], axis=1))
    t0 = T[:, 0]
    tG = T[:, 1:]
    var = amp - float(t0 @ t0)
    sd = math.sqrt(var) if var > 0.0 else 0.0
    mean = state.prior_mean + float(k @ state.c)
    if sd < SD_DERIV_FLOOR:
        raise DegenerateVarianceError(
            f"posterior sd {sd:.3e} below {SD_DERIV_FLOOR:.0e}; "
            "sigma^-1 derivative factors are not defined here"
        )
    DW = _solve_upper(L, T)
    dvec = DW[:, 0]
    W = DW[:, 1:]
    grad_mean = G.T @ state.c
    grad_sd = -(tG.T @ t0) / sd
    if order == 1:
        return PosteriorMoments(
            mean=mean, sd=sd, grad_mean=grad_mean, grad_sd=grad_sd,
            kvec=k, dvec=dvec, W=W, G=G,
        )

    hess_mean = np.einsum("p,pij->ij", state.c, H)
    kijd = np.einsum("p,pij->ij", dvec, H)
    GW = tG.T @ tG  # k_xX,i A^-1 k_Xx,j as an exactly symmetric Gram product
    hess_sd = -(kijd + GW + np.outer(grad_sd, grad_sd)) / sd
    return PosteriorMoments(
        mean=mean, sd=sd, grad_mean=grad_mean, grad_sd=grad_sd,
        hess_mean=hess_mean, hess_sd=hess_sd,
        kvec=k, dvec=dvec, W=W, G=G, H=H,
    )


def _refit_augmented(state: GPState, X: np.ndarray, y: np.ndarray,
                     noise_diag: np.ndarray, n_base: int) -> GPState:
    data = Dataset(X=X, y=y)
    m = data.m
    A = kernels.gram(X, state.params) + np.diag(noise_diag)
    L, jit = _chol_with_jitter(A, state.params.amplitude)
    cap = max(state.chol_buf.shape[0], m + 1)
    buf = np.zeros((cap, cap))
    buf[:m, :m] = L
    c = _solve_upper(L, _solve_lower(L, y - state.prior_mean))
    return GPState(
        data=data, params=state.params, noise=state.noise,
        prior_mean=state.prior_mean, chol_buf=buf, c=c,
        noise_diag=noise_diag, n_base=n_base, jitter=jit,
    )


def condition(state: GPState, x_new: np.ndarray, y_new: float,
              fantasy: bool = False) -> GPState:
    """New state with one more observation, via a Schur-complement append.

    Real observations carry the state's noise and must precede any fantasy;
    fantasy observations are noiseless and mutable. Falls back to a jittered
    refit when the Schur pivot is not positive.
    """
    x_new = np.asarray(x_new, dtype=float).reshape(state.dim)
    m = state.m
    if not fantasy and m > state.n_base:
        raise ValueError("cannot append an immutable observation after fantasies")
    noise_new = 0.0 if fantasy else state.noise
    n_base = state.n_base if fantasy else m + 1

    X_aug = np.vstack([state.data.X, x_new[None, :]]) if m else x_new[None, :].copy()
    y_aug = np.append(state.data.y, float(y_new))
    noise_aug = np.append(state.noise_diag, noise_new)

    kvec = kernels.value_row(x_new, state.data.X, state.params) if m else np.zeros(0)
    lrow = _solve_lower(state.L, kvec)
    pivot2 = state.params.amplitude + noise_new + state.jitter - float(lrow @ lrow)
    if pivot2 <= 0.0:
        return _refit_augmented(state, X_aug, y_aug, noise_aug, n_base)

    cap = state.chol_buf.shape[0]
    if m + 1 > cap:
        cap = max(2 * cap, m + 2)
    buf = np.zeros((cap, cap))
    buf[:m, :m] = state.L
    buf[m, :m] = lrow
    buf[m, m] = math.sqrt(pivot2)
    L = buf[: m + 1, : m + 1]
    c = _solve_upper(L, _solve_lower(L, y_aug - state.prior_mean))
    return GPState(
        data=Dataset(X=X_aug, y=y_aug), params=state.params, noise=state.noise,
        prior_mean=state.prior_mean, chol_buf=buf, c=c,
        noise_diag=noise_aug, n_base=n_base, jitter=state.jitter,
    )


# --- joint value+gradient conditioning (the gradient-informed sequence) -----


@dataclass(frozen=True)
class FantasyGP:
    """GP conditioned on the base data plus (value, gradient) pairs.

    The extended observation vector is ordered base values first, then one
    (1+d) block per fantasy point: value, then gradient components. ``chol``
    factors the joint covariance of that vector; ``c`` solves it against the
    centered observations.
    """

    base: GPState
    points: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    chol: np.ndarray
    c: np.ndarray

    @property
    def n_fantasy(self) -> int:
        return self.values.size

    @property
    def dim(self) -> int:
        return self.base.dim


def _fantasy_cross_block(x: np.ndarray, fgp_points: np.ndarray,
                         params: KernelParams, m_base: int,
                         X_base: np.ndarray) -> np.ndarray:
    """Covariance of (f(x), grad f(x)) with the extended observation vector."""
    d = params.dim
    nf = fgp_points.shape[0]
    M = m_base + nf * (1 + d)
    C = np.zeros((1 + d, M))
    if m_base:
        kb, Gb, _ = kernels.rows_upto(x, X_base, params, 1)
        C[0, :m_base] = kb
        C[1:, :m_base] = Gb.T
    if nf:
        kf, Gf, Hf = kernels.rows_upto(x, fgp_points, params, 2)
        for q in range(nf):
            col = m_base + q * (1 + d)
            C[0, col] = kf[q]
            C[0, col + 1 : col + 1 + d] = -Gf[q]
            C[1:, col] = Gf[q]
            C[1:, col + 1 : col + 1 + d] = -Hf[q]
    return C


def _prior_joint_block(params: KernelParams) -> np.ndarray:
    d = params.dim
    P = np.zeros((1 + d, 1 + d))
    P[0, 0] = params.amplitude
    P[1:, 1:] = (5.0 / 3.0) * params.amplitude * np.diag(1.0 / params.lengthscales**2)
    return P


def fantasy_from_state(state: GPState) -> FantasyGP:
    """Wrap a GP state as a fantasy GP with zero fantasy points."""
    d = state.dim
    return FantasyGP(
        base=state,
        points=np.zeros((0, d)),
        values=np.zeros(0),
        grads=np.zeros((0, d)),
        chol=state.L.copy(),
        c=state.c.copy(),
    )


def condition_with_gradient(
    state: GPState | FantasyGP, x: np.ndarray, f_val: float, grad_val: np.ndarray
) -> FantasyGP:
    """Condition on a sampled (value, gradient) pair at x (noiseless)."""
    fgp = fantasy_from_state(state) if isinstance(state, GPState) else state
    base = fgp.base
    d = base.dim
    x = np.asarray(x, dtype=float).reshape(d)
    grad_val = np.asarray(grad_val, dtype=float).reshape(d)

    C_new = _fantasy_cross_block(x, fgp.points, base.params, base.m, base.data.X)
    M_old = C_new.shape[1]
    P = _prior_joint_block(base.params)

    L_old = fgp.chol
    Z = _solve_lower(L_old, C_new.T) if M_old else np.zeros((0, 1 + d))
    S = P - Z.T @ Z
    amp = base.params.amplitude
    L_S = None
    for k in range(6):
        jit = 0.0 if k == 0 else 1e-12 * amp * 10.0 ** (k - 1)
        try:
            L_S = np.linalg.cholesky(S + jit * np.eye(1 + d) if jit else S)
            break
        except np.linalg.LinAlgError:
            continue
    if L_S is None:
        raise NotPositiveDefiniteError(
            "joint value+gradient covariance not positive definite", jitter=jit
        )

    M_new = M_old + 1 + d
    L = np.zeros((M_new, M_new))
    L[:M_old, :M_old] = L_old
    L[M_old:, :M_old] = Z.T
    L[M_old:, M_old:] = L_S

    points = np.vstack([fgp.points, x[None, :]])
    values = np.append(fgp.values, float(f_val))
    grads = np.vstack([fgp.grads, grad_val[None, :]])
    obs = _extended_observations(base, points, values, grads)
    c = _solve_upper(L, _solve_lower(L, obs))
    return FantasyGP(base=base, points=points, values=values, grads=grads,
                     chol=L, c=c)


def _extended_observations(base: GPState, points, values, grads) -> np.ndarray:
    d = base.dim
    nf = values.size
    obs = np.empty(base.m + nf * (1 + d))
    obs[: base.m] = base.data.y - base.prior_mean
    for q in range(nf):
        col = base.m + q * (1 + d)
        obs[col] = values[q] - base.prior_mean
        obs[col + 1 : col + 1 + d] = grads[q]
    return obs


def joint_moments(fgp: FantasyGP, x: np.ndarray):
    """Posterior mean and covariance of (f(x), grad f(x)); ((1+d,), (1+d,1+d))."""
    base = fgp.base
    d = base.dim
    x = np.asarray(x, dtype=float).reshape(d)
    C = _fantasy_cross_block(x, fgp.points, base.params, base.m, base.data.X)
    P = _prior_joint_block(base.params)
    mean = np.zeros(1 + d)
    mean[0] = base.prior_mean
    if C.shape[1]:
        mean += C @ fgp.c
        T = _solve_lower(fgp.chol, C.T)
        cov = P - T.T @ T
    else:
        cov = P
    return mean, cov


def _joint_chol(cov: np.ndarray, amplitude: float):
    for k in range(7):
        jit = 0.0 if k == 0 else 1e-14 * amplitude * 10.0 ** (k - 1)
        try:
            return np.linalg.cholesky(cov + jit * np.eye(cov.shape[0]) if jit else cov)
        except np.linalg.LinAlgError:
            continue
    return None


def sample_joint(fgp: FantasyGP, x: np.ndarray, z: np.ndarray):
    """Draw (value, gradient) at x from the joint posterior using the
    standard-normal vector z of length 1+d; deterministic given z.

    The covariance factor is lower triangular with the value coordinate
    first, so the value draw consumes only z[0].
    """
    d = fgp.dim
    z = np.asarray(z, dtype=float)
    if z.shape != (1 + d,):
        raise ValueError(f"z must have shape ({1 + d},)")
    mean, cov = joint_moments(fgp, x)
    L = _joint_chol(cov, fgp.base.params.amplitude)
    if L is None:
        # fully degenerate joint posterior: fall back to the mean
        out = mean
    else:
        out = mean + L @ z
    return float(out[0]), out[1:].copy()


def _chol_differential(L: np.ndarray, dS: np.ndarray) -> np.ndarray:
    """dL for S = L L^T under the perturbation dS (dS symmetric)."""
    A = solve_triangular(L, dS, lower=True, check_finite=False)
    A = solve_triangular(L, A.T, lower=True, check_finite=False).T
    # A = L^-1 dS L^-T; keep lower half with half weight on the diagonal
    Phi = np.tril(A)
    np.fill_diagonal(Phi, 0.5 * np.diag(A))
    return L @ Phi


def sample_joint_tangent(
    fgp: FantasyGP,
    x: np.ndarray,
    z: np.ndarray,
    J_query: np.ndarray,
    fantasy_tangents,
):
    """Joint draw at x together with its tangent along the start point.

    Forward-mode differentiation of the sampling map itself: the query
    moves by ``J_query`` (dx/dstart, d x d) and every fantasy observation
    j moves according to ``fantasy_tangents[j] = (J_j, v_j, W_j)`` (location
    Jacobian, value tangent, gradient tangent). Returns

        (f, grad, v, W)

    where f and grad reproduce :func:`sample_joint` exactly, v is df/dstart
    and W[t, k] is d grad[t] / d start[k]. These tangents are the exact
    derivatives of the realized draw under common random numbers, which is
    what makes the rollout gradient match finite differences of the
    estimator path by path.
    """
    base = fgp.base
    d = base.dim
    params = base.params
    x = np.asarray(x, dtype=float).reshape(d)
    z = np.asarray(z, dtype=float).reshape(1 + d)
    nf = fgp.n_fantasy
    if len(fantasy_tangents) != nf:
        raise ValueError("need one (J, v, W) tangent triple per fantasy point")
    m = base.m
    M = m + nf * (1 + d)

    all_points = np.vstack([base.data.X, fgp.points]) if m else fgp.points
    n_pts = all_points.shape[0]

    # cross block C and its derivative w.r.t. the query point
    C = _fantasy_cross_block(x, fgp.points, params, m, base.data.X)
    CQ = np.zeros((1 + d, M, d))  # dC/dx_query
    if m:
        _, G_b, H_b = kernels.rows_upto(x, base.data.X, params, 2)
        CQ[0, :m, :] = G_b
        CQ[1:, :m, :] = H_b.transpose(1, 0, 2)
    if nf:
        _, G_f, H_f = kernels.rows_upto(x, fgp.points, params, 2)
        T_f = kernels.third_rows(x, fgp.points, params)
        for q in range(nf):
            col = m + q * (1 + d)
            CQ[0, col, :] = G_f[q]
            CQ[0, col + 1 : col + 1 + d, :] = -H_f[q]
            CQ[1:, col, :] = H_f[q]
            CQ[1:, col + 1 : col + 1 + d, :] = -T_f[q]

    # dC/dstart_k: query movement plus fantasy-location movement (the
    # latter is the negated query-movement block of that fantasy's columns)
    dC = np.einsum("rqi,ik->krq", CQ, J_query)
    for q in range(nf):
        J_q = fantasy_tangents[q][0]
        col = m + q * (1 + d)
        dC[:, :, col : col + 1 + d] -= np.einsum(
            "rut,tk->kru", CQ[:, col : col + 1 + d, :], J_q
        )

    # extended covariance tangent: columns (and rows) of each fantasy block
    # move with that fantasy's location
    dA = np.zeros((d, M, M))
    for j in range(nf):
        xj = fgp.points[j]
        kj, Gj, Hj = kernels.rows_upto(xj, all_points, params, 2)
        Tj = kernels.third_rows(xj, all_points, params)
        colj = m + j * (1 + d)
        # D[a, block, t] = d A[a, colj+block] / d xj_t over all rows a
        D = np.zeros((M, 1 + d, d))
        for p in range(n_pts):
            if p < m:
                D[p, 0, :] = Gj[p]
                D[p, 1:, :] = Hj[p]
                continue
            q = p - m
            if q == j:
                continue  # own block is constant
            rowq = m + q * (1 + d)
            # value row of fantasy q
            D[rowq, 0, :] = Gj[p]
            D[rowq, 1:, :] = Hj[p]
            # gradient rows of fantasy q: Cov(df(x_q)/dw, .) = -d/dx_j forms
            D[rowq + 1 : rowq + 1 + d, 0, :] = -Hj[p]
            D[rowq + 1 : rowq + 1 + d, 1:, :] = -Tj[p]
        J_j = fantasy_tangents[j][0]
        contrib = np.einsum("abt,tk->kab", D, J_j)
        dA[:, :, colj : colj + 1 + d] += contrib
        dA[:, colj : colj + 1 + d, :] += contrib.transpose(0, 2, 1)

    # observation-vector tangent
    dobs = np.zeros((d, M))
    for j in range(nf):
        _, v_j, W_j = fantasy_tangents[j]
        colj = m + j * (1 + d)
        dobs[:, colj] = v_j
        dobs[:, colj + 1 : colj + 1 + d] = W_j.T

    # draw; the covariance uses the same Gram form as joint_moments so the
    # (f, grad) pair is bit-identical to sample_joint
    P = _prior_joint_block(params)
    L_A = fgp.chol
    mean = np.zeros(1 + d)
    mean[0] = base.prior_mean
    if M:
        T1 = _solve_lower(L_A, C.T)
        U = _solve_upper(L_A, T1)  # A^-1 C^T, (M, 1+d)
        mean += C @ fgp.c
        cov = P - T1.T @ T1
    else:
        U = np.zeros((0, 1 + d))
        cov = P
    L_S = _joint_chol(cov, params.amplitude)
    if L_S is None:
        out = mean
        dout = np.zeros((d, 1 + d))
        for k in range(d):
            dmean = dC[k] @ fgp.c if M else np.zeros(1 + d)
            if M:
                dc = _solve_upper(L_A, _solve_lower(L_A, dobs[k] - dA[k] @ fgp.c))
                dmean += C @ dc
            dout[k] = dmean
    else:
        out = mean + L_S @ z
        dout = np.zeros((d, 1 + d))
        for k in range(d):
            if M:
                dc = _solve_upper(L_A, _solve_lower(L_A, dobs[k] - dA[k] @ fgp.c))
                dmean = dC[k] @ fgp.c + C @ dc
                dCU = dC[k] @ U
                dcov = -dCU - dCU.T + U.T @ dA[k] @ U
            else:
                dmean = np.zeros(1 + d)
                dcov = np.zeros((1 + d, 1 + d))
            dL = _chol_differential(L_S, dcov)
            dout[k] = dmean + dL @ z
    f = float(out[0])
    grad = out[1:].copy()
    v = dout[:, 0].copy()
    W = dout[:, 1:].T.copy()  # W[t, k] = d grad_t / d start_k
    return f, grad, v, W


# --- derivatives of the posterior moments with respect to the data ----------


@dataclass(frozen=True)
class MomentSensitivity:
    """Derivatives of (mu, sd, grad mu, grad sd) at a query point with
    respect to one scalar perturbation of the data."""

    mu_dot: float
    sd_dot: float
    grad_mu_dot: np.ndarray
    grad_sd_dot: np.ndarray


@dataclass(frozen=True)
class DataDerivatives:
    """Sensitivities with respect to observation j's value and location."""

    value: MomentSensitivity
    location: tuple[MomentSensitivity, ...]


def posterior_data_derivatives(
    state: GPState, x: np.ndarray, j: int, moments: PosteriorMoments | None = None
) -> DataDerivatives:
    """Derivatives of the posterior moments at x w.r.t. fantasy observation j.

    j indexes into the state's dataset and must point at a fantasy
    (mutable) observation, i.e. j >= state.n_base.
    """
    if not (state.n_base <= j < state.m):
        raise ValueError(
            f"observation {j} is not a fantasy observation "
            f"(mutable range is [{state.n_base}, {state.m}))"
        )
    if moments is None or moments.H is None:
        moments = posterior(state, x, order=2)
    sd = moments.sd
    if sd < SD_DERIV_FLOOR:
        raise DegenerateVarianceError("degenerate sd in data derivatives")

    d = state.dim
    c = state.c
    dvec = moments.dvec
    W = moments.W
    gx_j = moments.G[j]
    hx_j = moments.H[j]

    # value perturbation: ydot = e_j leaves the covariance untouched
    val = MomentSensitivity(
        mu_dot=float(dvec[j]),
        sd_dot=0.0,
        grad_mu_dot=W[j, :].copy(),
        grad_sd_dot=np.zeros(d),
    )

    # location perturbations: row/column j of K and entry j of k_Xx move
    _, Gj, _ = kernels.rows_upto(state.data.X[j], state.data.X, state.params, 1)
    Gj = Gj.copy()
    Gj[j, :] = 0.0  # k(x^j, x^j) is constant
    gc = Gj.T @ c
    gd = Gj.T @ dvec
    gW = Gj.T @ W  # (d_pert, d_spatial)

    loc = []
    for t in range(d):
        kdot_j = -gx_j[t]
        mu_dot = kdot_j * c[j] - (dvec[j] * gc[t] + c[j] * gd[t])
        sd_dot = dvec[j] * (gx_j[t] + gd[t]) / sd
        grad_mu_dot = -hx_j[:, t] * c[j] - (W[j, :] * gc[t] + c[j] * gW[t, :])
        grad_sd_dot = -(
            sd_dot * moments.grad_sd
            - hx_j[:, t] * dvec[j]
            - W[j, :] * gx_j[t]
            - W[j, :] * gd[t]
            - dvec[j] * gW[t, :]
        ) / sd
        loc.append(
            MomentSensitivity(
                mu_dot=float(mu_dot), sd_dot=float(sd_dot),
                grad_mu_dot=grad_mu_dot, grad_sd_dot=grad_sd_dot,
            )
        )
    return DataDerivatives(value=val, location=tuple(loc))


# --- maximum likelihood hyperparameters --------------------------------------


def _nll_and_grad(log_theta: np.ndarray, X: np.ndarray, yc: np.ndarray,
                  noise: float):
    m, d = X.shape
    amp = math.exp(log_theta[0])
    ls = np.exp(log_theta[1:])
    params = KernelParams(amplitude=amp, lengthscales=ls)
    K = kernels.gram(X, params)
    A = K + noise * np.eye(m)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return math.inf, np.zeros(1 + d)
    alpha = _solve_upper(L, _solve_lower(L, yc))
    nll = 0.5 * float(yc @ alpha) + float(np.log(np.diag(L)).sum()) \
        + 0.5 * m * math.log(2.0 * math.pi)

    Ainv = _solve_upper(L, _solve_lower(L, np.eye(m)))
    grad = np.empty(1 + d)
    # d/d log amp: Adot = K
    grad[0] = 0.5 * (float((Ainv * K).sum()) - float(alpha @ K @ alpha))
    Kdots = kernels.gram_lengthscale_dots(X, params)
    for k in range(d):
        Kd = Kdots[k]
        grad[1 + k] = 0.5 * (float((Ainv * Kd).sum()) - float(alpha @ Kd @ alpha))
    return nll, grad


def fit_hypers(
    X: np.ndarray,
    y: np.ndarray,
    noise_floor: float,
    warm_start: KernelParams | None = None,
    n_restarts: int = 4,
    seed: int = 0,
) -> KernelParams:
    """Best-of-multistart maximum likelihood (amplitude, lengthscales).

    The search runs in log space over the box [1e-3, 1e3] per parameter;
    observations are centered internally; the noise variance is held at
    ``noise_floor``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    m, d = X.shape
    if m < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    yc = y - y.mean()
    lo, hi = _LOG_HYPER_BOUNDS
    bounds = [(lo, hi)] * (1 + d)

    var_y = float(yc.var())
    widths = X.max(axis=0) - X.min(axis=0)
    widths = np.where(widths > 0, widths, 1.0)
    starts = []
    if warm_start is not None:
        starts.append(np.log(np.concatenate(
            [[warm_start.amplitude], warm_start.lengthscales])))
    starts.append(np.log(np.concatenate(
        [[max(var_y, 1e-3)], np.maximum(0.2 * widths, 1e-3)])))
    rng = np.random.default_rng(seed)
    for _ in range(max(n_restarts - len(starts), 0)):
        amp0 = max(var_y, 1e-3) * math.exp(rng.normal(0.0, 1.0))
        ls0 = widths * np.exp(rng.uniform(math.log(0.05), math.log(2.0), size=d))
        starts.append(np.log(np.concatenate([[amp0], ls0])))

    best = None
    for s in starts:
        s = np.clip(s, lo, hi)
        res = minimize(
            _nll_and_grad, s, args=(X, yc, float(noise_floor)),
            jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 200},
        )
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best[0]:
            best = (res.fun, res.x)
    if best is None:
        raise NotPositiveDefiniteError("all hyperparameter starts failed to factor")
    theta = np.exp(best[1])
    return KernelParams(amplitude=float(theta[0]), lengthscales=theta[1:])
