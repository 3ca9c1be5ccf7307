"""Sampling, evaluating and differentiating lookahead trajectories.

A trajectory fantasizes h steps of the base policy (expected improvement)
from a start point: each step maximizes EI on the values-only fantasy GP,
then draws a (value, gradient) pair at the maximizer from the
gradient-informed fantasy GP. The rollout acquisition is the Monte Carlo
mean of the clamped improvement over the trajectory minimum.

Its gradient is the exact pathwise derivative of that estimate under
common random numbers: each inner maximizer moves by an
implicit-function-theorem Jacobian (EI Hessian against the mixed EI/data
derivatives of every earlier fantasy observation, including the running
incumbent when a fantasy holds it), and the sampled draws carry
forward-mode tangents through the moving query point and the moving
conditioning data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import acquisition, gp
from .domain import Box
from .errors import (
    DegenerateVarianceError,
    EstimatorDegradedError,
    NotPositiveDefiniteError,
)
from .gp import GPState
from .optimizer import InnerOptConfig, inner_maximize
from .sampler import QmcStream


@dataclass(frozen=True)
class RolloutConfig:
    """Horizon, sample count, variance-reduction flags and inner settings."""

    horizon: int
    n_samples: int
    box: Box
    base_policy: str = "ei"
    xi: float = 0.0
    qmc: bool = True
    crn: bool = True
    control_variate: bool = True
    inner: InnerOptConfig | None = None
    inner_seed: int = 0
    hess_cond_max: float = 1e12
    max_flagged_frac: float = 0.2

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.base_policy != "ei":
            raise ValueError("only the EI base policy is supported")
        if self.inner is None:
            object.__setattr__(self, "inner", InnerOptConfig(box=self.box))

    @property
    def stream_dim(self) -> int:
        return (self.horizon + 1) * (1 + self.box.dim)


@dataclass(frozen=True)
class TrajectoryStep:
    x: np.ndarray
    f: float
    grad: np.ndarray
    pinned: bool = False
    stationary: bool = True


@dataclass(frozen=True)
class Trajectory:
    """One realized rollout with its start-point sensitivities.

    ``jacobians[j]`` is dx^j/dx (identity at j=0). ``value_dots[j]`` and
    ``grad_dots[j]`` are the forward-mode tangents of the realized value
    and gradient draws along the start point, so value_dots[b] is the exact
    derivative of the trajectory minimum under common random numbers.
    ``gp_seq[j]`` is the values-only fantasy GP after conditioning on steps
    0..j.
    """

    steps: tuple[TrajectoryStep, ...]
    jacobians: tuple[np.ndarray, ...]
    value_dots: tuple[np.ndarray, ...]
    grad_dots: tuple[np.ndarray, ...]
    best_index: int
    gp_seq: tuple[GPState, ...]
    flagged: bool = False
    flag_reason: str = ""


def _ei_objective(state: GPState, f_best: float, xi: float):
    """(value, grad, hess) closure over the EI surface of one fantasy GP."""

    def objective(x):
        try:
            mom = gp.posterior(state, x, order=2)
        except DegenerateVarianceError:
            mom0 = gp.posterior(state, x, order=0)
            return acquisition.ei(mom0, f_best, xi), None, None
        return acquisition.ei_value_grad_hess(mom, f_best, xi)

    def value_only(x):
        return acquisition.ei(gp.posterior(state, x, order=0), f_best, xi)

    objective.value_only = value_only
    return objective


def _inner_rng(cfg: RolloutConfig, step: int) -> np.random.Generator:
    # restart points must not depend on the start point or the sample index,
    # otherwise common random numbers cannot smooth the estimator
    return np.random.default_rng([cfg.inner_seed, step])


def _incumbent_chain(base_f_best: float, steps):
    """(f_best, incumbent fantasy index) over base data plus fantasies so far.

    The index is None when a real (immutable) observation holds the
    incumbent, in which case f_best does not move with the start point.
    """
    f_best = base_f_best
    idx = None
    for j, s in enumerate(steps):
        if s.f < f_best:
            f_best = s.f
            idx = j
    return f_best, idx


def _step_jacobian(
    state: GPState,
    x_r: np.ndarray,
    f_best: float,
    incumbent_idx,
    cfg: RolloutConfig,
    jacobians,
    value_dots,
):
    """dx^r/dx via the implicit function theorem at the EI maximizer.

    Solves  H J = -B  where H is the EI Hessian at x^r and B accumulates
    d(grad EI)/d(fantasy data) times the chained data sensitivities; when a
    fantasy holds the incumbent, its value perturbation also moves f_best.
    Coordinates resting on a box bound are held fixed (zero rows) and the
    solve restricts to the free face; a fully pinned maximizer returns the
    zero matrix.
    """
    d = state.dim
    tol = 1e-9 * cfg.box.width
    active = (x_r - cfg.box.lower <= tol) | (cfg.box.upper - x_r <= tol)
    free = ~active
    if not free.any():
        return np.zeros((d, d))
    moments = gp.posterior(state, x_r, order=2)
    H = acquisition.ei_hess(moments, f_best, cfg.xi)
    B = np.zeros((d, d))
    for j in range(len(value_dots)):
        obs_index = state.n_base + j
        dd = gp.posterior_data_derivatives(state, x_r, obs_index, moments)
        fdot = 1.0 if j == incumbent_idx else 0.0
        _, a_val = acquisition.ei_mixed_data(moments, dd.value, f_best, cfg.xi,
                                             f_best_dot=fdot)
        B += np.outer(a_val, value_dots[j])
        for t in range(d):
            _, a_loc = acquisition.ei_mixed_data(moments, dd.location[t],
                                                 f_best, cfg.xi)
            B += np.outer(a_loc, jacobians[j][t, :])
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(B))):
        return None
    Hff = H[np.ix_(free, free)]
    Bf = B[free, :]
    if np.linalg.cond(Hff) > cfg.hess_cond_max:
        # on an EI plateau the coupling vanishes with the curvature and the
        # argmax is locked; only genuine ill-conditioning flags the sample
        if float(np.abs(Bf).max()) <= 1e-12 * max(1.0, float(np.abs(Hff).max())):
            return np.zeros((d, d))
        return None
    J = np.zeros((d, d))
    J[free, :] = -np.linalg.solve(Hff, Bf)
    return J


def sample_trajectory(
    gp_state: GPState,
    x0: np.ndarray,
    cfg: RolloutConfig,
    gaussian_row: np.ndarray,
    with_tangents: bool = True,
) -> Trajectory:
    """Roll the base policy out for cfg.horizon steps from x0.

    ``gaussian_row`` supplies (horizon+1)*(1+d) standard-normal coordinates:
    the first (1+d) drive the start draw, slice r the step-r draw. The
    trajectory is deterministic given the row, the state and the config;
    the realized draws are identical with or without tangents
    (``with_tangents=False`` skips the sensitivity chain for value-only
    evaluations and leaves zeros in the tangent fields).
    """
    box = cfg.box
    d = gp_state.dim
    x0 = np.asarray(x0, dtype=float).reshape(d)
    if not box.contains(x0):
        raise ValueError("start point outside the domain box")
    row = np.asarray(gaussian_row, dtype=float).reshape(cfg.stream_dim)

    flagged = False
    reason = ""

    g_seq = gp.fantasy_from_state(gp_state)
    if with_tangents:
        f0, grad0, v0, W0 = gp.sample_joint_tangent(g_seq, x0, row[: 1 + d],
                                                    np.eye(d), [])
    else:
        f0, grad0 = gp.sample_joint(g_seq, x0, row[: 1 + d])
        v0, W0 = np.zeros(d), np.zeros((d, d))
    steps = [TrajectoryStep(x=x0.copy(), f=f0, grad=grad0)]
    jacobians = [np.eye(d)]
    value_dots = [v0]
    grad_dots = [W0]
    f_state = gp.condition(gp_state, x0, f0, fantasy=True)
    g_seq = gp.condition_with_gradient(g_seq, x0, f0, grad0)
    gp_seq = [f_state]

    for r in range(1, cfg.horizon + 1):
        f_best, incumbent_idx = _incumbent_chain(gp_state.data.f_best, steps)
        objective = _ei_objective(f_state, f_best, cfg.xi)
        res = inner_maximize(objective, cfg.inner, _inner_rng(cfg, r))
        x_r = res.x
        step_pinned = res.pinned
        step_stationary = res.stationary or res.pinned
        if not step_stationary:
            flagged = True
            reason = reason or f"inner step {r} not stationary"

        if not with_tangents:
            J_r = np.zeros((d, d))
        else:
            try:
                J_r = _step_jacobian(f_state, x_r, f_best, incumbent_idx, cfg,
                                     jacobians, value_dots)
            except DegenerateVarianceError:
                J_r = None
            if J_r is None:
                flagged = True
                reason = reason or f"singular EI Hessian at step {r}"
                J_r = np.zeros((d, d))

        zslice = row[r * (1 + d) : (r + 1) * (1 + d)]
        if with_tangents:
            tangents = [(jacobians[j], value_dots[j], grad_dots[j])
                        for j in range(len(steps))]
            f_r, grad_r, v_r, W_r = gp.sample_joint_tangent(
                g_seq, x_r, zslice, J_r, tangents
            )
        else:
            f_r, grad_r = gp.sample_joint(g_seq, x_r, zslice)
            v_r, W_r = np.zeros(d), np.zeros((d, d))
        steps.append(TrajectoryStep(x=x_r, f=f_r, grad=grad_r,
                                    pinned=step_pinned, stationary=step_stationary))
        jacobians.append(J_r)
        value_dots.append(v_r)
        grad_dots.append(W_r)
        f_state = gp.condition(f_state, x_r, f_r, fantasy=True)
        g_seq = gp.condition_with_gradient(g_seq, x_r, f_r, grad_r)
        gp_seq.append(f_state)

    fvals = np.array([s.f for s in steps])
    best_index = int(np.argmin(fvals))
    return Trajectory(
        steps=tuple(steps),
        jacobians=tuple(jacobians),
        value_dots=tuple(value_dots),
        grad_dots=tuple(grad_dots),
        best_index=best_index,
        gp_seq=tuple(gp_seq),
        flagged=flagged,
        flag_reason=reason,
    )


def trajectory_min(traj: Trajectory, f_best: float):
    """(best step index, clamped improvement over f_best); ties take the
    smallest index."""
    fvals = np.array([s.f for s in traj.steps])
    b = int(np.argmin(fvals))
    return b, max(f_best - float(fvals[b]), 0.0)


def trajectory_jacobian(traj: Trajectory):
    """Chained dx^j/dx for every step (identity at step 0)."""
    return traj.jacobians


def trajectory_grad(traj: Trajectory, f_best: float) -> np.ndarray:
    """d/dx of the clamped trajectory improvement for one sample.

    Zero when the trajectory does not improve (subgradient at the clamp
    kink); otherwise minus the chained sensitivity of the best fantasy
    value.
    """
    b, improvement = trajectory_min(traj, f_best)
    d = traj.steps[0].x.size
    if improvement <= 0.0:
        return np.zeros(d)
    return -traj.value_dots[b]


@dataclass(frozen=True)
class RolloutEstimate:
    """Monte Carlo estimate of the rollout acquisition and its gradient."""

    value: float
    value_se: float
    grad: np.ndarray
    grad_se: np.ndarray
    beta_cv: float
    n_used: int
    n_flagged: int = 0
    se_defined: bool = True


def apply_control_variate(improvements: np.ndarray, w_samples: np.ndarray,
                          ei_value: float):
    """Shift the improvement samples by the fitted one-step control variate.

    ``w_samples`` holds the one-step improvements max(f_best - f0, 0) built
    from the same Gaussian draws; the control variate is their excess over
    the analytic expected improvement, which has mean zero by construction.
    Returns the adjusted samples and the fitted coefficient.
    """
    improvements = np.asarray(improvements, dtype=float)
    w = np.asarray(w_samples, dtype=float) - ei_value
    if improvements.size < 2:
        return improvements.copy(), 0.0
    var_w = float(w.var(ddof=1))
    if var_w <= 1e-14:
        return improvements.copy(), 0.0
    cov = float(np.cov(improvements, w, ddof=1)[0, 1])
    beta = -cov / var_w
    return improvements + beta * w, beta


def rollout_value_and_grad(
    gp_state: GPState,
    x: np.ndarray,
    cfg: RolloutConfig,
    stream: QmcStream,
    need_grad: bool = True,
) -> RolloutEstimate:
    """Estimate the rollout acquisition and its gradient at x.

    With common random numbers the caller reuses one stream across every x
    of an outer optimization run. Trajectories whose inner step failed the
    stationarity certificate (or whose Hessian was numerically singular)
    keep their improvement in the value average but drop out of the
    gradient average. ``need_grad=False`` skips the sensitivity chain and
    reports a zero gradient (the value is unchanged).
    """
    box = cfg.box
    d = gp_state.dim
    x = np.asarray(x, dtype=float).reshape(d)
    if not box.contains(x):
        raise ValueError("query point outside the domain box")
    Z = stream.normals()
    if Z.shape[1] != cfg.stream_dim:
        raise ValueError(
            f"stream dimension {Z.shape[1]} does not match (h+1)(1+d) = {cfg.stream_dim}"
        )
    n = Z.shape[0]
    f_star = gp_state.data.f_best

    try:
        mom0 = gp.posterior(gp_state, x, order=0)
        ei_x = acquisition.ei(mom0, f_star, 0.0)
    except DegenerateVarianceError:
        ei_x = 0.0

    improvements = np.empty(n)
    onestep = np.empty(n)
    grads = np.zeros((n, d))
    grad_ok = np.zeros(n, dtype=bool)
    n_flagged = 0
    for i in range(n):
        try:
            traj = sample_trajectory(gp_state, x, cfg, Z[i], with_tangents=need_grad)
        except (DegenerateVarianceError, NotPositiveDefiniteError):
            improvements[i] = 0.0
            onestep[i] = 0.0
            n_flagged += 1
            continue
        _, imp = trajectory_min(traj, f_star)
        improvements[i] = imp
        onestep[i] = max(f_star - traj.steps[0].f, 0.0)
        if traj.flagged:
            n_flagged += 1
        elif need_grad:
            grads[i] = trajectory_grad(traj, f_star)
            grad_ok[i] = True

    if n_flagged > cfg.max_flagged_frac * n:
        raise EstimatorDegradedError(
            f"{n_flagged}/{n} trajectories flagged; estimator degraded",
            n_flagged=n_flagged, n_total=n,
        )

    beta = 0.0
    values = improvements
    if cfg.control_variate:
        values, beta = apply_control_variate(improvements, onestep, ei_x)

    se_defined = n > 1
    value = float(values.mean())
    value_se = float(values.std(ddof=1) / math.sqrt(n)) if se_defined else 0.0

    n_grad = int(grad_ok.sum())
    if n_grad:
        grad = grads[grad_ok].mean(axis=0)
        if n_grad > 1:
            grad_se = grads[grad_ok].std(axis=0, ddof=1) / math.sqrt(n_grad)
        else:
            grad_se = np.zeros(d)
    else:
        grad = np.zeros(d)
        grad_se = np.zeros(d)
    return RolloutEstimate(
        value=value, value_se=value_se, grad=grad, grad_se=grad_se,
        beta_cv=float(beta), n_used=n, n_flagged=n_flagged,
        se_defined=se_defined and n_grad > 1,
    )
