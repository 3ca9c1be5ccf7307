"""The Bayesian optimization loop, the GAP metric, and per-run records.

Each iteration refits the kernel hyperparameters by maximum likelihood on
standardized observations (warm-started from the previous fit), rebuilds
the GP in raw units, maximizes the configured acquisition and evaluates
the objective at the proposal. The gap normalizes the achieved reduction
of the incumbent by the largest reduction possible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .. import acquisition, gp
from ..domain import Box
from ..errors import DegenerateVarianceError
from ..kernels import KernelParams
from ..optimizer import AdamConfig, InnerOptConfig, inner_maximize, propose_next
from ..rollout import RolloutConfig
from .functions import TestFunction

POLICIES = ("pi", "ei", "ucb", "rollout")


@dataclass(frozen=True)
class LoopConfig:
    """Knobs of one BO run; rollout fields are ignored by myopic policies."""

    n_init: int = 1
    noise_floor: float = 1e-6
    xi: float = 0.0
    ucb_beta: float = 2.0
    inner_restarts: int = 8
    # rollout policy (desk-scale defaults)
    horizon: int = 1
    n_samples: int = 8
    qmc: bool = True
    crn: bool = True
    control_variate: bool = True
    adam_restarts: int = 3
    adam_iters: int = 20
    traj_inner_restarts: int = 2
    # fixed-hyperparameter mode (used by scale-invariance checks)
    fixed_params: KernelParams | None = None
    fixed_noise: float | None = None


@dataclass(frozen=True)
class BenchRun:
    """One completed (or aborted) BO run."""

    function: str
    policy: str
    seed: int
    budget: int
    n_init: int
    history: tuple[float, ...]
    gap: float
    wall_ms: float
    aborted: bool = False
    abort_reason: str = ""


def gap(history, f_opt: float) -> float:
    """Normalized incumbent reduction (f1 - fB) / (f1 - f_opt) in [0, 1].

    A run that starts at the optimum has nothing left to gain and scores 1;
    numerical overshoot below f_opt is clamped.
    """
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        raise ValueError("history must be nonempty")
    f1 = float(history[0])
    fb = float(history[-1])
    denom = f1 - f_opt
    if denom <= 1e-12:
        return 1.0
    g = (f1 - fb) / denom
    if g > 1.0 + 1e-9:
        raise ValueError(f"gap {g} exceeds 1 beyond numerical overshoot")
    return float(min(max(g, 0.0), 1.0))


def _policy_tag(policy: str, horizon: int) -> str:
    return f"alpha_{horizon}" if policy == "rollout" else policy


def _fit_state(X, y, cfg: LoopConfig, warm: KernelParams | None, box: Box):
    """MLE (or fixed) hyperparameters on standardized data, GP in raw units."""
    y = np.asarray(y, dtype=float)
    ybar = float(y.mean())
    if cfg.fixed_params is not None:
        noise = cfg.fixed_noise if cfg.fixed_noise is not None else cfg.noise_floor
        state = gp.fit(X, y, cfg.fixed_params, noise=noise, prior_mean=ybar)
        return state, cfg.fixed_params
    s = float(y.std())
    if s < 1e-12:
        s = 1.0
    if y.size < 2:
        # not enough data for maximum likelihood yet; generic unit prior
        params_std = KernelParams(amplitude=1.0, lengthscales=0.2 * box.width)
    else:
        params_std = gp.fit_hypers(X, (y - ybar) / s, cfg.noise_floor,
                                   warm_start=warm, seed=0)
    params = KernelParams(amplitude=params_std.amplitude * s * s,
                          lengthscales=params_std.lengthscales)
    state = gp.fit(X, y, params, noise=cfg.noise_floor * s * s, prior_mean=ybar)
    return state, params_std


def _propose_myopic(state, policy: str, cfg: LoopConfig, box: Box, rng):
    f_best = state.data.f_best
    if policy == "ei":
        funcs = (acquisition.ei, acquisition.ei_grad, acquisition.ei_hess)
        args = (f_best, cfg.xi)
    elif policy == "pi":
        funcs = (acquisition.poi, acquisition.poi_grad, acquisition.poi_hess)
        args = (f_best, cfg.xi)
    elif policy == "ucb":
        funcs = (acquisition.ucb, acquisition.ucb_grad, acquisition.ucb_hess)
        args = (cfg.ucb_beta,)
    else:
        raise ValueError(f"unknown myopic policy {policy!r}")

    def objective(x):
        try:
            mom = gp.posterior(state, x, order=2)
        except DegenerateVarianceError:
            mom0 = gp.posterior(state, x, order=0)
            if policy == "ei":
                return acquisition.ei(mom0, f_best, cfg.xi), None, None
            if policy == "ucb":
                return acquisition.ucb(mom0, cfg.ucb_beta), None, None
            return 0.0, None, None
        return funcs[0](mom, *args), funcs[1](mom, *args), funcs[2](mom, *args)

    icfg = InnerOptConfig(box=box, restarts=cfg.inner_restarts)
    return inner_maximize(objective, icfg, rng).x


def run_bo(
    function: TestFunction,
    policy: str,
    seed: int,
    budget: int,
    n_init: int | None = None,
    cfg: LoopConfig = LoopConfig(),
) -> BenchRun:
    """One BO run; deterministic given (function, policy, seed, cfg)."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    n_init = cfg.n_init if n_init is None else n_init
    if n_init < 1:
        raise ValueError("n_init must be at least 1")

    t0 = time.perf_counter()
    box = function.box
    rng = np.random.default_rng(seed)
    X = box.uniform(rng, n_init)
    y = np.array([function(x) for x in X])
    history = [float(y.min())]
    warm = None
    aborted = False
    reason = ""

    for it in range(1, budget + 1):
        state, warm = _fit_state(X, y, cfg, warm, box)
        if policy == "rollout":
            rcfg = RolloutConfig(
                horizon=cfg.horizon, n_samples=cfg.n_samples, box=box,
                xi=cfg.xi, qmc=cfg.qmc, crn=cfg.crn,
                control_variate=cfg.control_variate,
                inner=InnerOptConfig(box=box, restarts=cfg.traj_inner_restarts),
                inner_seed=seed * 1009 + it,
            )
            acfg = AdamConfig(restarts=cfg.adam_restarts, max_iters=cfg.adam_iters)
            x_next = propose_next(state, rcfg, acfg, seed=seed * 100003 + it)
        else:
            x_next = _propose_myopic(state, policy, cfg, box,
                                     np.random.default_rng([seed, it]))
        y_next = function(x_next)
        if not math.isfinite(y_next):
            aborted = True
            reason = f"objective returned non-finite value at iteration {it}"
            break
        X = np.vstack([X, x_next[None, :]])
        y = np.append(y, y_next)
        history.append(float(y.min()))

    wall_ms = (time.perf_counter() - t0) * 1e3
    return BenchRun(
        function=function.name,
        policy=_policy_tag(policy, cfg.horizon),
        seed=seed,
        budget=budget,
        n_init=n_init,
        history=tuple(history),
        gap=gap(history, function.f_opt) if not aborted else math.nan,
        wall_ms=wall_ms,
        aborted=aborted,
        abort_reason=reason,
    )
