"""Inner deterministic acquisition maximization and outer stochastic ascent.

The inner solver is a multistart projected Newton method on a twice
differentiable objective; it runs to an x-step tolerance (scale-free) and
reports a stationarity certificate against the gradient tolerance. The
outer solver is Adam ascent on a stochastic (value, grad, se) objective
with box projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import Box
from .errors import DegenerateVarianceError, EstimatorDegradedError


@dataclass(frozen=True)
class InnerOptConfig:
    """Multistart second-order inner maximization settings."""

    box: Box
    restarts: int = 8
    grad_tol: float = 1e-3
    max_newton_iters: int = 40
    x_tol: float = 1e-11  # step tolerance, relative to the widest box side

    def __post_init__(self):
        if self.grad_tol <= 0.0:
            raise ValueError("grad_tol must be positive")
        if self.restarts < 1 or self.max_newton_iters < 1:
            raise ValueError("restarts and max_newton_iters must be at least 1")


@dataclass(frozen=True)
class AdamConfig:
    """Adam ascent settings for the outer stochastic maximization."""

    step_size: float | None = None  # None: 0.1 * |box diagonal| / sqrt(d)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 50
    restarts: int = 8
    grad_tol: float = 1e-3

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be at least 1")


@dataclass(frozen=True)
class InnerResult:
    x: np.ndarray
    value: float
    grad_inf: float
    stationary: bool
    pinned: bool


def _projected_grad_inf(x: np.ndarray, g: np.ndarray, box: Box) -> float:
    """Infinity norm of the ascent gradient projected onto the feasible cone."""
    pg = g.copy()
    tol = 1e-9 * box.width  # same boundary tolerance as the active set
    at_lo = x - box.lower <= tol
    at_hi = box.upper - x <= tol
    pg[at_lo] = np.maximum(pg[at_lo], 0.0)
    pg[at_hi] = np.minimum(pg[at_hi], 0.0)
    return float(np.abs(pg).max()) if pg.size else 0.0


def _newton_from(objective, x0: np.ndarray, cfg: InnerOptConfig):
    box = cfg.box
    x = box.project(np.asarray(x0, dtype=float))
    step_tol = cfg.x_tol * float(box.width.max())
    # line-search probes only need the value; use a cheap path when offered
    probe = getattr(objective, "value_only", None)
    try:
        v, g, H = objective(x)
    except DegenerateVarianceError:
        return None
    bound_tol = 1e-9 * box.width
    for _ in range(cfg.max_newton_iters):
        if g is None:
            break
        # active-set reduction: coordinates resting on a bound with the
        # gradient pointing outward stay fixed; Newton runs on the face
        at_lo = x - box.lower <= bound_tol
        at_hi = box.upper - x <= bound_tol
        active = (at_lo & (g < 0.0)) | (at_hi & (g > 0.0))
        free = ~active
        if not free.any():
            break
        Bf = -np.asarray(H, dtype=float)[np.ix_(free, free)]
        w = np.linalg.eigvalsh(Bf)
        scale = max(float(np.abs(w).max()), 1e-300)
        shift = max(0.0, 1e-8 * scale - float(w.min()))
        try:
            pf = np.linalg.solve(Bf + shift * np.eye(Bf.shape[0]), g[free])
        except np.linalg.LinAlgError:
            break
        p = np.zeros_like(x)
        p[free] = pf
        # plateau curvature can make the shifted solve astronomically long
        pmax = float(np.abs(p).max())
        diag = float(np.abs(box.width).max())
        if pmax > 10.0 * diag:
            p *= 10.0 * diag / pmax
        accepted = None
        t = 1.0
        for _ in range(24):
            x_t = box.project(x + t * p)
            dx = x_t - x
            if float(np.abs(dx).max()) <= step_tol:
                break
            try:
                if probe is not None:
                    if probe(x_t) > v:
                        v_t, g_t, H_t = objective(x_t)
                        accepted = (x_t, v_t, g_t, H_t, dx)
                        break
                else:
                    v_t, g_t, H_t = objective(x_t)
                    if v_t > v:
                        accepted = (x_t, v_t, g_t, H_t, dx)
                        break
            except DegenerateVarianceError:
                pass
            t *= 0.5
        if accepted is None:
            break
        x, v, g, H, dx = accepted
        if g is None or float(np.abs(dx).max()) <= step_tol:
            break
    if g is None:
        return None
    grad_inf = _projected_grad_inf(x, g, box)
    raw_inf = float(np.abs(g).max()) if g.size else 0.0
    pinned = box.on_boundary(x, rtol=1e-9) and raw_inf > cfg.grad_tol
    return InnerResult(
        x=x, value=float(v), grad_inf=grad_inf,
        stationary=grad_inf <= cfg.grad_tol, pinned=pinned,
    )


def inner_maximize(
    objective,
    cfg: InnerOptConfig,
    rng: np.random.Generator,
    extra_starts: np.ndarray | None = None,
) -> InnerResult:
    """Best-of-restarts projected Newton maximization.

    ``objective(x)`` returns (value, grad, hess); it may return
    (value, None, None) at points where derivatives are undefined, which
    ends that restart. Returns the best candidate; ``stationary`` is False
    when no restart reached the gradient tolerance (boundary-pinned points
    count as converged).
    """
    starts = [cfg.box.uniform(rng, 1)[0] for _ in range(cfg.restarts)]
    if extra_starts is not None:
        starts = [np.asarray(s, dtype=float) for s in extra_starts] + starts
    best: InnerResult | None = None
    for s in starts:
        res = _newton_from(objective, s, cfg)
        if res is None:
            continue
        if best is None or res.value > best.value:
            best = res
    if best is None:
        raise EstimatorDegradedError("no inner restart produced a usable iterate")
    return best


@dataclass(frozen=True)
class AdamResult:
    x: np.ndarray
    value: float
    n_iters: int


def adam_maximize(
    objective,
    x0: np.ndarray,
    cfg: AdamConfig,
    box: Box,
) -> AdamResult:
    """Adam ascent with bias correction and box projection.

    ``objective(x)`` returns (value, grad, se). Stops at max_iters or after
    the gradient infinity norm stays at or below grad_tol for three
    consecutive iterations; keeps the best finite iterate seen.
    """
    d = box.dim
    step = cfg.step_size
    if step is None:
        step = 0.1 * float(np.linalg.norm(box.width)) / math.sqrt(d)
    x = box.project(np.asarray(x0, dtype=float))
    m = np.zeros(d)
    v = np.zeros(d)
    best_x, best_v = x.copy(), -math.inf
    streak = 0
    t = 0
    for t in range(1, cfg.max_iters + 1):
        val, g, _ = objective(x)
        if not np.all(np.isfinite(g)):
            break
        if np.isfinite(val) and val > best_v:
            best_x, best_v = x.copy(), float(val)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        mhat = m / (1.0 - cfg.beta1**t)
        vhat = v / (1.0 - cfg.beta2**t)
        x = box.project(x + step * mhat / (np.sqrt(vhat) + cfg.epsilon))
        streak = streak + 1 if float(np.abs(g).max()) <= cfg.grad_tol else 0
        if streak >= 3:
            break
    if best_v == -math.inf:
        val, _, _ = objective(x)
        best_x, best_v = x, float(val)
    return AdamResult(x=best_x, value=best_v, n_iters=t)


def _base_policy_argmax(gp_state, rollout_cfg, rng):
    """Argmax of the analytic base acquisition, used to seed the outer search."""
    from . import acquisition, gp

    f_best = gp_state.data.f_best

    def objective(x):
        try:
            mom = gp.posterior(gp_state, x, order=2)
        except DegenerateVarianceError:
            mom0 = gp.posterior(gp_state, x, order=0)
            return acquisition.ei(mom0, f_best, rollout_cfg.xi), None, None
        return acquisition.ei_value_grad_hess(mom, f_best, rollout_cfg.xi)

    cfg = InnerOptConfig(box=rollout_cfg.box, restarts=rollout_cfg.inner.restarts)
    return inner_maximize(objective, cfg, rng).x


def propose_next(gp_state, rollout_cfg, adam_cfg: AdamConfig, seed: int):
    """Outer maximization of the rollout acquisition over the start point.

    Runs ``adam_cfg.restarts`` Adam ascents sharing one common-random-number
    stream: one seeded at the base acquisition's own argmax (the lookahead
    maximizer is often nearby, and the seeded start means a failed search
    can never do worse than the base policy's proposal), the rest from
    box-uniform starts. The best ascent gets a second fine-step polish
    (constant-step Adam orbits its maximizer at the step scale), and the
    candidates are re-ranked on a fresh stream with twice the samples.
    """
    from .rollout import rollout_value_and_grad  # cycle break
    from .sampler import QmcStream

    box = rollout_cfg.box
    dim_z = (rollout_cfg.horizon + 1) * (1 + box.dim)
    mode = "sobol" if rollout_cfg.qmc else "pseudorandom"
    rng = np.random.default_rng(seed)

    call_count = [0]

    def objective(x):
        if rollout_cfg.crn:
            stream = QmcStream(dim=dim_z, n=rollout_cfg.n_samples, seed=seed, mode=mode)
        else:
            call_count[0] += 1
            stream = QmcStream(dim=dim_z, n=rollout_cfg.n_samples,
                               seed=seed * 100003 + call_count[0], mode=mode)
        est = rollout_value_and_grad(gp_state, x, rollout_cfg, stream)
        return est.value, est.grad, est.value_se

    anchor = _base_policy_argmax(gp_state, rollout_cfg, rng)
    starts = [anchor] + list(box.uniform(rng, max(adam_cfg.restarts - 1, 1)))
    candidates = [anchor]
    best_res = None
    for s in starts:
        res = adam_maximize(objective, s, adam_cfg, box)
        candidates.append(res.x)
        if best_res is None or res.value > best_res.value:
            best_res = res

    coarse_step = adam_cfg.step_size
    if coarse_step is None:
        coarse_step = 0.1 * float(np.linalg.norm(box.width)) / math.sqrt(box.dim)
    polish_cfg = AdamConfig(
        step_size=coarse_step / 8.0, beta1=adam_cfg.beta1, beta2=adam_cfg.beta2,
        epsilon=adam_cfg.epsilon, max_iters=adam_cfg.max_iters,
        restarts=1, grad_tol=adam_cfg.grad_tol,
    )
    candidates.append(adam_maximize(objective, best_res.x, polish_cfg, box).x)

    refine = QmcStream(dim=dim_z, n=2 * rollout_cfg.n_samples, seed=seed + 1, mode=mode)
    best_x, best_v = None, -math.inf
    for x in candidates:
        est = rollout_value_and_grad(gp_state, x, rollout_cfg, refine,
                                     need_grad=False)
        if est.value > best_v:
            best_x, best_v = x, est.value
    return best_x
