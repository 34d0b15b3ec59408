from __future__ import annotations

import numpy as np

from .sim import SimConfig, advance
from .state import SystemState
from .trajectory import Trajectory


def rollout(policy, s0: SystemState, steps: int, morph, config: SimConfig, program=None,
            terrain=None, ctx=None) -> Trajectory:
    """Run ``policy`` for ``steps`` control periods, logging states, controls and rewards.

    A non-finite state ends the rollout early and sets ``truncated``; the
    offending step is not recorded.
    """
    from ..reward.features import RewardContext
    from ..reward.program import eval_step_reward

    if steps < 1:
        raise ValueError("rollout needs at least one step")
    if ctx is None:
        ctx = RewardContext(morph, terrain) if terrain is not None else RewardContext(morph)
    names = program.names if program is not None else ()
    nq, nu = morph.n_q, morph.n_u
    t = np.zeros(steps)
    q = np.zeros((steps, nq))
    qdot = np.zeros((steps, nq))
    a = np.zeros((steps, nu))
    u_log = np.zeros((steps, nu))
    total = np.zeros(steps)
    terms = {n: np.zeros(steps) for n in names}
    has_obj = s0.obj is not None
    obj_pose = np.zeros((steps, 3)) if has_obj else None
    obj_grasped = np.zeros(steps, dtype=bool) if has_obj else None

    state = s0
    prev_u = np.zeros(nu)
    n = 0
    truncated = False
    limit_hits = 0
    for k in range(steps):
        u = np.asarray(policy(state), dtype=float)
        if u.shape != (nu,):
            raise ValueError(f"policy returned controls of shape {u.shape}, expected ({nu},)")
        nxt = advance(state, u, morph, config, terrain)
        if not (np.all(np.isfinite(nxt.q)) and np.all(np.isfinite(nxt.qdot))):
            truncated = True
            break
        state = nxt
        limit_hits += int(np.any(state.limit_hit))
        t[k] = state.t
        q[k] = state.q
        qdot[k] = state.qdot
        a[k] = state.a
        u_log[k] = u
        if has_obj:
            obj_pose[k] = state.obj.pose
            obj_grasped[k] = bool(state.obj.grasped)
        if program is not None:
            r, per = eval_step_reward(program, state, u, ctx, prev_u)
            total[k] = r
            for name in names:
                terms[name][k] = per[name]
        prev_u = u
        n = k + 1

    cut = slice(0, n)
    return Trajectory(
        initial=s0, t=t[cut], q=q[cut], qdot=qdot[cut], a=a[cut], u=u_log[cut],
        terms={k: v[cut] for k, v in terms.items()}, total=total[cut],
        obj_pose=obj_pose[cut] if has_obj else None,
        obj_grasped=obj_grasped[cut] if has_obj else None,
        truncated=truncated, limit_hits=limit_hits, control_dt=config.control_dt,
        joint_names=morph.joint_names, muscle_names=morph.muscle_names,
    )


def zero_policy(morph):
    u = np.zeros(morph.n_u)
    return lambda state: u


def constant_policy(u):
    u = np.asarray(u, dtype=float)
    return lambda state: u
