"""Hierarchical posture-space MPC.

The high level runs MPPI over target postures ``z`` (the major joint angles
selected by ``Morphology.posture_indices``), so the search dimension is
``d_z`` regardless of horizon and muscle count. The low level turns a target
posture into muscle commands with a morphology-aware proportional law::

    K_m  = k_bar * sum_i |J_m[m, i] * (z*_i - z_i)|
    f*_m = min(0, K_m * (l*_m - l_m))
    u_m  = clamp(-f*_m / f_max_m, 0, 1)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics.sim import SimConfig, advance, muscle_geometry
from .reward.features import RewardContext
from .reward.program import eval_step_reward


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 10
    n_samples: int = 64
    noise_sigma: float = 0.15
    temperature: float = 1.0
    instant_fraction: float = 0.25
    replan_interval: int = 5
    k_bar: float | None = None  # None: use the task's default

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.instant_fraction <= 1.0:
            raise ValueError("instant_fraction must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.replan_interval < 1:
            raise ValueError("replan_interval must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def posture_map(state, morph) -> np.ndarray:
    """Major joint angles ``z`` of a (possibly batched) state."""
    return state.q[..., list(morph.posture_indices)]


def posture_limits(morph) -> np.ndarray:
    return morph.joint_limits[list(morph.posture_indices)]


def sample_candidates(z_mean, state, morph, config: PlannerConfig, rng) -> np.ndarray:
    """Candidate postures, shape ``(n_samples, d_z)``.

    Row 0 is ``z_mean`` itself. Of the remaining rows, ``ceil(instant_fraction * n)``
    (at most ``n - 1``) are drawn around the current posture, the rest around
    ``z_mean``. Everything is clamped to the joint limits.
    """
    z_mean = np.asarray(z_mean, dtype=float)
    current = posture_map(state, morph)
    n = config.n_samples
    n_instant = min(math.ceil(config.instant_fraction * n), n - 1)
    noise = rng.normal(0.0, 1.0, size=(n - 1, len(z_mean))) * config.noise_sigma
    centers = np.empty((n - 1, len(z_mean)))
    centers[:n_instant] = current
    centers[n_instant:] = z_mean
    lim = posture_limits(morph)
    cands = np.vstack([z_mean[None], centers + noise])
    return np.clip(cands, lim[:, 0], lim[:, 1])


def gain(state, z_star, morph, k_bar: float) -> np.ndarray:
    """Per-actuator proportional gain ``K`` (N/m)."""
    dz = np.asarray(z_star) - posture_map(state, morph)
    jm = np.abs(morph.muscle_jacobian[:, list(morph.posture_indices)])  # (d_u, d_z)
    return k_bar * (np.abs(dz) @ jm.T)


def desired_forces(state, z_star, morph, k_bar: float):
    """Target muscle forces ``f*`` (non-positive) and the gains used."""
    idx = list(morph.posture_indices)
    q_star = np.array(state.q, dtype=float, copy=True)
    q_star = np.broadcast_to(q_star, np.broadcast_shapes(q_star.shape[:-1], np.shape(z_star)[:-1]) + q_star.shape[-1:]).copy()
    q_star[..., idx] = z_star
    l_star, _ = muscle_geometry(q_star, morph)
    l, _ = muscle_geometry(state.q, morph)
    K = gain(state, z_star, morph, k_bar)
    return np.minimum(0.0, K * (l_star - l)), K


def low_level_control(state, z_star, morph, k_bar: float) -> np.ndarray:
    f_star, _ = desired_forces(state, z_star, morph, k_bar)
    return np.clip(-f_star / morph.muscles.f_max, 0.0, 1.0)


def mppi_weights(costs, temperature: float) -> np.ndarray:
    """Softmax weights ``exp(-(C - C_min) / lambda)``; non-finite costs get weight 0."""
    costs = np.asarray(costs, dtype=float)
    ok = np.isfinite(costs)
    if not np.any(ok):
        raise PlannerError("every candidate produced a non-finite cost")
    c_min = costs[ok].min()
    w = np.zeros_like(costs)
    w[ok] = np.exp(-(costs[ok] - c_min) / temperature)
    return w / w.sum()


def mppi_update(candidates, costs, temperature: float) -> np.ndarray:
    w = mppi_weights(costs, temperature)
    return w @ np.asarray(candidates)


@dataclass
class Simulator:
    """What the planner needs to roll candidates forward and score them."""

    morph: object
    sim: SimConfig
    terrain: object
    ctx: RewardContext
    k_bar: float

    @classmethod
    def from_task(cls, task, k_bar: float | None = None) -> "Simulator":
        return cls(task.morphology, task.sim, task.terrain, RewardContext.from_task(task),
                   task.k_bar if k_bar is None else k_bar)


def candidate_costs(state, candidates, program, simulator: Simulator, horizon: int, prev_u=None) -> np.ndarray:
    """Cost ``-sum r`` of holding each candidate posture for ``horizon`` control steps."""
    n = len(candidates)
    batch = state.tile(n)
    morph = simulator.morph
    prev = np.zeros((n, morph.n_u)) if prev_u is None else np.repeat(np.asarray(prev_u)[None], n, 0)
    cost = np.zeros(n)
    with np.errstate(all="ignore"):
        for _ in range(horizon):
            u = low_level_control(batch, candidates, morph, simulator.k_bar)
            batch = advance(batch, u, morph, simulator.sim, simulator.terrain)
            r, _ = eval_step_reward(program, batch, u, simulator.ctx, prev, strict=False)
            cost = cost - r
            prev = u
    cost[~np.isfinite(cost)] = np.nan
    return cost


def plan(state, program, simulator: Simulator, config: PlannerConfig, rng, z_mean=None, prev_u=None,
         cost_fn=None) -> np.ndarray:
    """One MPPI update of the target posture.

    ``cost_fn`` (candidates -> costs) replaces simulation when given.
    """
    morph = simulator.morph
    if z_mean is None:
        z_mean = posture_map(state, morph)
    cands = sample_candidates(z_mean, state, morph, config, rng)
    if cost_fn is None:
        costs = candidate_costs(state, cands, program, simulator, config.horizon, prev_u)
    else:
        costs = np.asarray(cost_fn(cands), dtype=float)
    try:
        return mppi_update(cands, costs, config.temperature)
    except PlannerError as exc:
        raise PlannerError(f"{exc} at t={state.t:.3f}s; costs={costs[:4]}...") from None


class MPCPolicy:
    """Stateful policy: replans every ``replan_interval`` calls, warm-started."""

    def __init__(self, program, simulator: Simulator, config: PlannerConfig, seed: int = 0):
        self.program = program
        self.simulator = simulator
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.z = None
        self.steps = 0
        self.plan_calls = 0
        self.prev_u = None
        self.targets: list[np.ndarray] = []

    def __call__(self, state) -> np.ndarray:
        if self.steps % self.config.replan_interval == 0:
            self.z = plan(state, self.program, self.simulator, self.config, self.rng,
                          z_mean=self.z, prev_u=self.prev_u)
            self.plan_calls += 1
            self.targets.append(self.z.copy())
        self.steps += 1
        u = low_level_control(state, self.z, self.simulator.morph, self.simulator.k_bar)
        self.prev_u = u
        return u


def task_planner(task, **overrides) -> PlannerConfig:
    """Planner defaults with the task's preset and then ``overrides`` (None skipped) applied."""
    return with_defaults(PlannerConfig(**task.planner), **overrides)


def mpc_policy(program, task, config: PlannerConfig | None = None, seed: int = 0) -> MPCPolicy:
    config = config or task_planner(task)
    return MPCPolicy(program, Simulator.from_task(task, config.k_bar), config, seed)


def with_defaults(config: PlannerConfig, **overrides) -> PlannerConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
