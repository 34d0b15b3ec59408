"""Forward simulation of muscle-driven planar chains.

Equation of motion: ``M(q) qdd + c(q, qd) = J_m^T f_m + J_c^T f_c + tau_ext``,
integrated with semi-implicit Euler.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .muscles import SimulationError, activation_step, muscle_force
from .state import MuscleState, JointState, ObjectState, SystemState


@dataclass(frozen=True, eq=False)
class SimConfig:
    dt: float = 1e-3
    gravity: float = 9.81
    contact_stiffness: float = 2.0e4
    contact_damping: float = 300.0
    friction_coeff: float = 0.9
    friction_damping: float | None = None  # tangential viscosity before the Coulomb cap; None: contact_damping
    external_torque: np.ndarray | None = None
    joint_damping: float = 0.0
    limit_stiffness: float = 100.0
    limit_damping: float = 5.0
    grasp_radius: float = 0.05
    substeps: int = 10  # simulation steps per control step

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("contact_stiffness", "contact_damping", "friction_coeff", "tangential_damping",
                     "joint_damping", "limit_stiffness", "limit_damping"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def tangential_damping(self) -> float:
        return self.contact_damping if self.friction_damping is None else self.friction_damping

    @property
    def control_dt(self) -> float:
        return self.dt * self.substeps


class FlatGround:
    def height(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def slope(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


FLAT = FlatGround()


def muscle_geometry(q, morph, qdot=None):
    """Lengths ``l = l0 - rho q`` and rates ``v = -rho qdot`` (zeros if qdot is None)."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != morph.n_q:
        raise ValueError(f"expected {morph.n_q} joint angles, got {q.shape[-1]}")
    l = morph.rest_lengths - q @ morph.moment_arms.T
    if qdot is None:
        v = np.zeros_like(l)
    else:
        qdot = np.asarray(qdot, dtype=float)
        if qdot.shape != q.shape:
            raise ValueError("qdot shape differs from q")
        v = -qdot @ morph.moment_arms.T
    return l, v


def contact_forces(pos, vel, terrain, config: SimConfig):
    """Penalty ground reaction at contact points; returns forces and depth."""
    x, y = pos[..., 0], pos[..., 1]
    h = terrain.height(x)
    hs = terrain.slope(x)
    inv = 1.0 / np.sqrt(1.0 + hs * hs)
    depth = (h - y) * inv
    nx, ny = -hs * inv, inv
    tx, ty = inv, hs * inv
    vn = vel[..., 0] * nx + vel[..., 1] * ny
    vt = vel[..., 0] * tx + vel[..., 1] * ty
    touching = depth > 0
    fn = np.where(touching, np.maximum(0.0, config.contact_stiffness * depth - config.contact_damping * vn), 0.0)
    ft = -np.sign(vt) * np.minimum(config.friction_coeff * fn, config.tangential_damping * np.abs(vt))
    force = np.stack([fn * nx + ft * tx, fn * ny + ft * ty], axis=-1)
    return force, depth


def generalized_forces(state: SystemState, a, morph, config: SimConfig, terrain=None, check: bool = True):
    """Mass matrix and the right-hand side ``tau - c`` at ``state`` with activation ``a``."""
    kin = morph.kin
    terrain = FLAT if terrain is None else terrain
    q, qd = state.q, state.qdot
    nb = kin.nb

    tau = np.zeros_like(q)
    if morph.n_u:
        l, v = muscle_geometry(q, morph, qd)
        f = muscle_force(l, v, a, morph.muscles, check=check)
        tau = tau + f @ morph.muscle_jacobian
    if config.external_torque is not None:
        tau = tau + config.external_torque

    C = np.concatenate([kin.C_com, kin.C_contact], axis=0)
    pos, J, bias = kin.point_state(q, qd, C)
    J_com = J[..., :nb, :, :]
    M = kin.mass_matrix(q, J_com)
    acc = bias[..., :nb, :].copy()
    acc[..., 1] += config.gravity
    c = np.einsum("b,...bxj,...bx->...j", kin.masses, J_com, acc)

    limit_hit = np.zeros(q.shape[:-1], dtype=bool)
    if kin.C_contact.shape[0]:
        Jc = J[..., nb:, :, :]
        vel = np.einsum("...pxj,...j->...px", Jc, qd)
        fc, _ = contact_forces(pos[..., nb:, :], vel, terrain, config)
        tau = tau + np.einsum("...pxj,...px->...j", Jc, fc)

    lo, hi = morph.joint_limits[:, 0], morph.joint_limits[:, 1]
    over = np.maximum(0.0, q - hi)
    under = np.maximum(0.0, lo - q)
    outside = (over > 0) | (under > 0)
    if np.any(outside):
        limit_hit = np.any(outside, axis=-1)
        tau = tau - config.limit_stiffness * (over - under) - config.limit_damping * qd * outside
    if config.joint_damping:
        damp = np.ones(morph.n_q)
        damp[: morph.base_dofs] = 0.0
        if morph.floating_base:
            damp[morph.base_dofs] = 0.0
        tau = tau - config.joint_damping * damp * qd
    return M, tau - c, limit_hit


def _update_object(obj: ObjectState, q, morph, config: SimConfig) -> ObjectState:
    kin = morph.kin
    tip = kin.points(q, kin.C_tip)[..., 0, :]
    tip_angle = kin.angles(q)[..., morph.tip[0]]
    pose = obj.pose.copy()
    dist = np.linalg.norm(tip - pose[..., :2], axis=-1)
    newly = ~obj.grasped & (dist < config.grasp_radius)
    grip = np.where(newly, pose[..., 2] - tip_angle, obj.grip_angle)
    grasped = obj.grasped | newly
    held = grasped[..., None]
    follow = np.concatenate([tip, (tip_angle + grip)[..., None]], axis=-1)
    pose = np.where(held, follow, pose)
    return ObjectState(pose, grasped, grip)


def dynamics_step(state: SystemState, u, morph, config: SimConfig, terrain=None, check: bool = True) -> SystemState:
    """Advance one simulation step of length ``config.dt``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (morph.n_u,):
        raise ValueError(f"expected {morph.n_u} controls, got shape {u.shape}")
    dt = config.dt
    a = activation_step(state.a, u, morph.muscles, dt, check=check) if morph.n_u else state.a
    M, rhs, limit_hit = generalized_forces(state, a, morph, config, terrain, check=check)
    try:
        qdd = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SimulationError("mass matrix is singular") from exc
    qd = state.qdot + dt * qdd
    q = state.q + dt * qd
    l, v = muscle_geometry(q, morph, qd)
    obj = state.obj
    if obj is not None and morph.tip is not None:
        obj = _update_object(obj, q, morph, config)
    return SystemState(JointState(q, qd), MuscleState(a, l, v), state.t + dt, obj, limit_hit)


def control_step(state: SystemState, u, morph, config: SimConfig, terrain=None, check: bool = True) -> SystemState:
    """Hold ``u`` for ``config.substeps`` simulation steps."""
    hit = np.zeros(state.batch_shape, dtype=bool)
    for _ in range(config.substeps):
        state = dynamics_step(state, u, morph, config, terrain, check=check)
        hit = hit | state.limit_hit
    state.limit_hit = hit
    return state


def advance(state: SystemState, u, morph, config: SimConfig, terrain=None) -> SystemState:
    """``control_step`` without input checks, using the compiled kernel when it applies.

    Set ``MUSCLEREWARD_BACKEND=numpy`` to force the reference implementation.
    """
    if os.environ.get("MUSCLEREWARD_BACKEND", "").lower() != "numpy":
        from . import fast

        out = fast.control_step(state, u, morph, config, terrain)
        if out is not None:
            return out
    return control_step(state, u, morph, config, terrain, check=False)
