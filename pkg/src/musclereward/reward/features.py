"""Feature catalog: named scalar signals a reward term may reference.

Every feature is defined for every valid state of every morphology; signals
that do not apply to a body (e.g. foot clearance for the arm) evaluate to 0.
All values broadcast over a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..dynamics.sim import FLAT, contact_forces

# name -> (takes an integer index, description)
FEATURES: dict[str, tuple[bool, str]] = {
    "height": (False, "pelvis height above the ground as a fraction of standing height"),
    "forward_velocity": (False, "forward speed of the pelvis (m/s)"),
    "forward_distance": (False, "forward pelvis displacement since the start (m)"),
    "balance": (False, "centre-of-mass x minus the midpoint of the feet (m); 0 is centred"),
    "torso_uprightness": (False, "cosine of torso tilt from vertical; 1 is upright"),
    "effort": (False, "sum of squared muscle commands"),
    "control_smoothness": (False, "sum of absolute command changes since the previous step"),
    "foot_clearance": (False, "height of the higher foot's lowest point above the ground (m)"),
    "step_symmetry": (False, "minus the absolute sum of the two hip angles (rad); 0 is symmetric"),
    "joint_angle": (True, "generalised coordinate j (rad, or m for the base position)"),
    "joint_velocity": (True, "rate of generalised coordinate j"),
    "target_position_error": (False, "distance from the object to its target position (m)"),
    "target_orientation_error": (False, "absolute angle from the object to its target angle (rad)"),
    "grasp_distance": (False, "distance from the hand to the object, 0 once held (m)"),
    "contact_flag": (True, "1 when contact point j touches the ground, else 0"),
}


def wrap_angle(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class RewardContext:
    morphology: object
    terrain: object = FLAT
    nominal_height: float = 1.0
    x0: float = 0.0
    target_position: tuple[float, float] | None = None
    target_orientation: float | None = None

    @classmethod
    def from_task(cls, task) -> "RewardContext":
        return cls(
            morphology=task.morphology,
            terrain=task.terrain,
            nominal_height=task.nominal_height,
            x0=float(task.s0.q[0]) if task.morphology.floating_base else 0.0,
            target_position=task.spec.target_position,
            target_orientation=task.spec.target_orientation,
        )

    def index_range(self, name: str) -> int:
        if name == "contact_flag":
            return len(self.morphology.contact_points)
        return self.morphology.n_q


class Frame:
    """Lazily computed feature values for one (batched) state and control."""

    def __init__(self, state, u, ctx: RewardContext, prev_u=None):
        self.state = state
        self.u = np.asarray(u, dtype=float)
        self.prev_u = prev_u
        self.ctx = ctx
        self.morph = ctx.morphology
        self.kin = ctx.morphology.kin
        self.zeros = np.zeros(state.q.shape[:-1])

    def get(self, name: str, arg: int | None = None):
        if name in ("joint_angle", "joint_velocity", "contact_flag"):
            return getattr(self, name)(arg)
        return getattr(self, name)

    @property
    def floating(self) -> bool:
        return self.morph.floating_base

    @cached_property
    def height(self):
        if not self.floating:
            return self.zeros
        q = self.state.q
        return (q[..., 1] - self.ctx.terrain.height(q[..., 0])) / self.ctx.nominal_height

    @cached_property
    def forward_velocity(self):
        return self.state.qdot[..., 0] if self.floating else self.zeros

    @cached_property
    def forward_distance(self):
        return self.state.q[..., 0] - self.ctx.x0 if self.floating else self.zeros

    @cached_property
    def contacts(self):
        return self.kin.points(self.state.q, self.kin.C_contact)

    @cached_property
    def balance(self):
        if not self.floating or not self.morph.feet:
            return self.zeros
        idx = [i for foot in self.morph.feet for i in foot]
        support = self.contacts[..., idx, 0].mean(axis=-1)
        return self.kin.com(self.state.q)[..., 0] - support

    @cached_property
    def torso_uprightness(self):
        if not self.floating:
            return self.zeros + 1.0
        return np.cos(self.state.q[..., self.morph.base_dofs])

    @cached_property
    def effort(self):
        return np.sum(self.u**2, axis=-1)

    @cached_property
    def control_smoothness(self):
        if self.prev_u is None:
            return self.zeros
        return np.sum(np.abs(self.u - self.prev_u), axis=-1)

    @cached_property
    def foot_clearance(self):
        if not self.morph.feet:
            return self.zeros
        pts = self.contacts
        above = pts[..., 1] - self.ctx.terrain.height(pts[..., 0])
        lows = [above[..., list(foot)].min(axis=-1) for foot in self.morph.feet]
        return np.max(np.stack(lows, axis=-1), axis=-1)

    @cached_property
    def step_symmetry(self):
        names = self.morph.joint_names
        if "hip_r" not in names or "hip_l" not in names:
            return self.zeros
        q = self.state.q
        return -np.abs(q[..., names.index("hip_r")] + q[..., names.index("hip_l")])

    def joint_angle(self, j: int):
        return self.state.q[..., j]

    def joint_velocity(self, j: int):
        return self.state.qdot[..., j]

    @cached_property
    def target_position_error(self):
        obj = self.state.obj
        if obj is None or self.ctx.target_position is None:
            return self.zeros
        return np.linalg.norm(obj.pose[..., :2] - np.asarray(self.ctx.target_position), axis=-1)

    @cached_property
    def target_orientation_error(self):
        obj = self.state.obj
        if obj is None or self.ctx.target_orientation is None:
            return self.zeros
        return np.abs(wrap_angle(obj.pose[..., 2] - self.ctx.target_orientation))

    @cached_property
    def grasp_distance(self):
        obj = self.state.obj
        if obj is None or self.kin.C_tip is None:
            return self.zeros
        tip = self.kin.points(self.state.q, self.kin.C_tip)[..., 0, :]
        dist = np.linalg.norm(tip - obj.pose[..., :2], axis=-1)
        return np.where(obj.grasped, 0.0, dist)

    def contact_flag(self, j: int):
        pts = self.contacts[..., j, :]
        _, depth = contact_forces(pts, np.zeros_like(pts), self.ctx.terrain, _UNIT_CONTACT)
        return (depth > 0).astype(float)


class _UnitContact:
    contact_stiffness = 1.0
    contact_damping = 0.0
    friction_coeff = 0.0
    tangential_damping = 0.0


_UNIT_CONTACT = _UnitContact()


def catalog_summary() -> str:
    lines = []
    for name, (indexed, doc) in FEATURES.items():
        sig = f"{name}(j)" if indexed else name
        lines.append(f"- {sig}: {doc}")
    return "\n".join(lines)
