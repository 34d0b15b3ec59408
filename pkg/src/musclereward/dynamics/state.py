from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray


@dataclass
class MuscleState:
    a: np.ndarray
    l: np.ndarray
    v: np.ndarray


@dataclass
class ObjectState:
    """Pose of a manipulated object; follows the arm tip once grasped."""

    pose: np.ndarray  # (..., 3): x, y, theta
    grasped: np.ndarray  # (...,) bool
    grip_angle: np.ndarray  # (...,) object angle minus tip-link angle at grasp


@dataclass
class SystemState:
    joints: JointState
    muscles: MuscleState
    t: float = 0.0
    obj: ObjectState | None = None
    limit_hit: np.ndarray | bool = False

    @property
    def q(self) -> np.ndarray:
        return self.joints.q

    @property
    def qdot(self) -> np.ndarray:
        return self.joints.qdot

    @property
    def a(self) -> np.ndarray:
        return self.muscles.a

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.joints.q.shape[:-1]

    def copy(self) -> "SystemState":
        obj = None
        if self.obj is not None:
            obj = ObjectState(self.obj.pose.copy(), np.array(self.obj.grasped, copy=True),
                              np.array(self.obj.grip_angle, copy=True))
        return SystemState(
            JointState(self.q.copy(), self.qdot.copy()),
            MuscleState(self.a.copy(), self.muscles.l.copy(), self.muscles.v.copy()),
            self.t, obj, np.array(self.limit_hit, copy=True),
        )

    def tile(self, n: int) -> "SystemState":
        """Batch of ``n`` copies of an unbatched state."""
        if self.batch_shape:
            raise ValueError("state is already batched")
        rep = lambda x: np.repeat(np.asarray(x)[None], n, axis=0)  # noqa: E731
        obj = None
        if self.obj is not None:
            obj = ObjectState(rep(self.obj.pose), rep(self.obj.grasped), rep(self.obj.grip_angle))
        return SystemState(
            JointState(rep(self.q), rep(self.qdot)),
            MuscleState(rep(self.a), rep(self.muscles.l), rep(self.muscles.v)),
            self.t, obj, np.zeros(n, dtype=bool),
        )

    def take(self, i: int) -> "SystemState":
        """Unbatched element ``i`` of a batched state."""
        obj = None
        if self.obj is not None:
            obj = ObjectState(self.obj.pose[i].copy(), np.array(self.obj.grasped[i]),
                              np.array(self.obj.grip_angle[i]))
        return SystemState(
            JointState(self.q[i].copy(), self.qdot[i].copy()),
            MuscleState(self.a[i].copy(), self.muscles.l[i].copy(), self.muscles.v[i].copy()),
            self.t, obj, bool(np.asarray(self.limit_hit).reshape(-1)[i]) if np.ndim(self.limit_hit) else bool(self.limit_hit),
        )

    def with_time(self, t: float) -> "SystemState":
        return replace(self, t=t)


def make_state(morph, q, qdot=None, a=None, obj_pose=None, t: float = 0.0) -> SystemState:
    """Consistent state: muscle lengths and rates follow from (q, qdot)."""
    q = np.array(q, dtype=float)
    qdot = np.zeros_like(q) if qdot is None else np.array(qdot, dtype=float)
    if q.shape[-1] != morph.n_q or qdot.shape != q.shape:
        raise ValueError(f"expected joint vectors of size {morph.n_q}")
    a = np.zeros(q.shape[:-1] + (morph.n_u,)) if a is None else np.array(a, dtype=float)
    l = morph.rest_lengths - q @ morph.moment_arms.T
    v = -qdot @ morph.moment_arms.T
    obj = None
    if obj_pose is not None:
        pose = np.array(obj_pose, dtype=float)
        obj = ObjectState(pose, np.zeros(pose.shape[:-1], dtype=bool), np.zeros(pose.shape[:-1]))
    return SystemState(JointState(q, qdot), MuscleState(a, l, v), t, obj)
