"""Task catalog: morphology presets, terrains and initial states.

Six tasks at toy planar scale: three walker terrains, an injured walker and
two reaching/reorientation tasks for a three-link arm. Everything is
deterministic given ``(task_id, seed)``; the seed only shapes rough terrain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics.chain import ContactPoint, Link, Morphology
from .dynamics.muscles import MuscleParams
from .dynamics.sim import SimConfig
from .dynamics.state import SystemState, make_state

TASK_IDS = (
    "walker_flat",
    "walker_slope",
    "walker_rough",
    "walker_injured",
    "arm_reach",
    "arm_reorient",
)

ROUGH_SPACING = 0.25
ROUGH_AMPLITUDE = 0.03
ROUGH_RANGE = (-5.0, 40.0)
SLOPE_ANGLE = 0.05
INJURY_SCALE = 0.3


@dataclass(frozen=True, eq=False)
class Terrain:
    kind: str = "flat"
    slope_angle: float = 0.0
    x0: float = 0.0
    spacing: float = ROUGH_SPACING
    heights: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "slope", "rough"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "rough":
            if self.heights is None or not np.all(np.isfinite(self.heights)):
                raise ValueError("rough terrain needs a finite height field")

    @property
    def knots(self) -> np.ndarray:
        return self.x0 + self.spacing * np.arange(len(self.heights))

    def height(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(x)
        if self.kind == "slope":
            return x * math.tan(self.slope_angle)
        return np.interp(x, self.knots, self.heights)

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(x)
        if self.kind == "slope":
            return np.full_like(x, math.tan(self.slope_angle))
        grads = np.diff(self.heights) / self.spacing
        idx = np.clip(np.floor((x - self.x0) / self.spacing).astype(int), 0, len(grads) - 1)
        inside = (x >= self.x0) & (x <= self.knots[-1])
        return np.where(inside, grads[idx], 0.0)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "slope":
            out["slope_angle"] = self.slope_angle
        if self.kind == "rough":
            out.update(x0=self.x0, spacing=self.spacing, seed=self.seed,
                       heights=[float(h) for h in self.heights])
        return out


def terrain_height(terrain: Terrain, x):
    return terrain.height(x)


def rough_terrain(seed: int) -> Terrain:
    rng = np.random.default_rng(seed)
    lo, hi = ROUGH_RANGE
    n = int(round((hi - lo) / ROUGH_SPACING)) + 1
    heights = rng.uniform(-ROUGH_AMPLITUDE, ROUGH_AMPLITUDE, size=n)
    # flatten the start so the initial stance is level
    heights[: int(round((1.0 - lo) / ROUGH_SPACING))] = 0.0
    return Terrain("rough", x0=lo, spacing=ROUGH_SPACING, heights=heights, seed=seed)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    task_id: str
    morphology: str
    terrain: Terrain
    motion_description: str
    horizon_s: float = 10.0
    target_position: tuple[float, float] | None = None
    target_orientation: float | None = None
    injury: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        manip = self.morphology == "arm3"
        if manip and self.target_position is None:
            raise ValueError("manipulation tasks need a target")
        if not manip and (self.target_position is not None or self.target_orientation is not None):
            raise ValueError("locomotion tasks carry no target")
        for _, scale in self.injury:
            if not 0.0 <= scale <= 1.0:
                raise ValueError("injury scales must lie in [0, 1]")

    @property
    def is_manipulation(self) -> bool:
        return self.morphology == "arm3"

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "morphology": self.morphology,
            "terrain": self.terrain.to_dict(),
            "motion_description": self.motion_description,
            "horizon_s": self.horizon_s,
            "target_position": list(self.target_position) if self.target_position else None,
            "target_orientation": self.target_orientation,
            "injury": [list(x) for x in self.injury],
        }


@dataclass(frozen=True, eq=False)
class Task:
    """Everything a rollout, planner or judge needs for one task instance."""

    spec: TaskSpec
    morphology: Morphology
    terrain: Terrain
    s0: SystemState
    sim: SimConfig
    k_bar: float
    nominal_height: float = 1.0
    fall_height: float = 0.0
    success_threshold: float = 1.0
    seed: int = 0
    planner: dict = field(default_factory=dict)  # PlannerConfig overrides for this task

    @property
    def task_id(self) -> str:
        return self.spec.task_id

    @property
    def horizon_steps(self) -> int:
        return int(round(self.spec.horizon_s / self.sim.control_dt))


DESCRIPTIONS = {
    "walker_flat": "Walk forward along a straight line over level ground at roughly 1 m/s, "
                   "keeping the torso upright and the heading steady.",
    "walker_slope": "Walk forward along a straight line up a gentle incline at roughly 1 m/s, "
                    "keeping the torso upright and the heading steady.",
    "walker_rough": "Walk forward along a straight line over uneven ground at roughly 1 m/s, "
                    "keeping the torso upright and the heading steady.",
    "walker_injured": "Walk forward along a straight line over level ground with a weakened right "
                      "hamstring and right calf, compensating with the healthy muscles.",
    "arm_reach": "Take hold of the object and carry it to the marked target position.",
    "arm_reorient": "Take hold of the object and turn it to the marked target angle while "
                    "keeping it near the marked target position.",
}


def _leg_muscles(side: str, hip: int, knee: int, ankle: int, nq: int):
    # (name, f_max N, l_opt m, {joint: moment arm m/rad})
    table = [
        ("hip_flexor", 1000.0, 0.16, {hip: 0.05}),
        ("gluteus", 1500.0, 0.16, {hip: -0.06}),
        ("hamstring", 1200.0, 0.30, {hip: -0.05, knee: -0.035}),
        ("rectus_femoris", 600.0, 0.28, {hip: 0.035, knee: 0.04}),
        ("vasti", 3000.0, 0.18, {knee: 0.05}),
        ("knee_flexor", 500.0, 0.16, {knee: -0.03}),
        ("gastrocnemius", 2500.0, 0.30, {knee: -0.025, ankle: -0.05}),
        ("tibialis", 700.0, 0.20, {ankle: 0.04}),
    ]
    names, params, rows = [], [], []
    for name, fmax, lopt, arms in table:
        row = np.zeros(nq)
        for j, r in arms.items():
            row[j] = r
        names.append(f"{name}_{side}")
        params.append(MuscleParams(f_max=fmax, l_opt=lopt, width=0.5, v_max=1.5,
                                   k_passive=2.0 * fmax, tau_act=0.015, tau_deact=0.06))
        rows.append(row)
    return names, params, rows


def walker_morphology(injury=()) -> Morphology:
    torso_l, thigh_l, shank_l, foot_l = 0.6, 0.42, 0.42, 0.22
    links = [
        Link("torso", torso_l, 20.0, 20.0 * torso_l**2 / 12, -1, 0.0, math.pi, 0.25),
    ]
    for side in ("r", "l"):
        base = len(links)
        links += [
            Link(f"thigh_{side}", thigh_l, 5.0, 5.0 * thigh_l**2 / 12, 0, 0.0, 0.0),
            Link(f"shank_{side}", shank_l, 3.0, 3.0 * shank_l**2 / 12, base, thigh_l, 0.0),
            Link(f"foot_{side}", foot_l, 1.0, 1.0 * foot_l**2 / 12, base + 1, shank_l, math.pi / 2, 0.06),
        ]
    joint_names = ("root_x", "root_y", "torso", "hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l")
    nq = len(joint_names)
    inf = np.inf
    leg_limits = [(-0.6, 1.6), (-2.3, 0.0), (-0.7, 0.5)]
    limits = [(-inf, inf)] * 3 + leg_limits + leg_limits
    names, params, rows = [], [], []
    for side, (h, k, a) in (("r", (3, 4, 5)), ("l", (6, 7, 8))):
        n, p, r = _leg_muscles(side, h, k, a, nq)
        names += n
        params += p
        rows += r
    for idx, scale in injury:
        params[idx] = params[idx].scaled(scale)
    contacts = (
        ContactPoint("heel_r", 3, -0.05), ContactPoint("toe_r", 3, 0.17),
        ContactPoint("heel_l", 6, -0.05), ContactPoint("toe_l", 6, 0.17),
        ContactPoint("knee_r", 2, 0.0), ContactPoint("knee_l", 5, 0.0),
        ContactPoint("pelvis", 0, 0.0), ContactPoint("head", 0, torso_l),
    )
    return Morphology(
        name="biped7",
        links=tuple(links),
        floating_base=True,
        joint_names=joint_names,
        joint_limits=np.array(limits),
        moment_arms=np.array(rows),
        rest_lengths=np.array([p.l_opt for p in params]),
        muscle_params=tuple(params),
        muscle_names=tuple(names),
        posture_indices=(3, 4, 5, 6, 7, 8),
        contact_points=contacts,
        feet=((0, 1), (2, 3)),
        tip=None,
    )


def arm_morphology() -> Morphology:
    links = (
        Link("upper_arm", 0.30, 1.8, 1.8 * 0.30**2 / 12, -1, 0.0, math.pi / 2),
        Link("forearm", 0.30, 1.2, 1.2 * 0.30**2 / 12, 0, 0.30, math.pi / 2),
        Link("hand", 0.12, 0.4, 0.4 * 0.12**2 / 12, 1, 0.30, math.pi / 2),
    )
    joint_names = ("shoulder", "elbow", "wrist")
    limits = np.array([(-1.0, 2.0), (0.0, 2.5), (-1.0, 1.0)])
    mid = limits.mean(axis=1)
    table = [
        ("shoulder_flexor", 800.0, {0: 0.04}),
        ("shoulder_extensor", 800.0, {0: -0.04}),
        ("elbow_flexor", 600.0, {1: 0.03}),
        ("elbow_extensor", 600.0, {1: -0.03}),
        ("wrist_flexor", 300.0, {2: 0.02}),
        ("wrist_extensor", 300.0, {2: -0.02}),
    ]
    names, params, rows = [], [], []
    for name, fmax, arms in table:
        row = np.zeros(3)
        for j, r in arms.items():
            row[j] = r
        names.append(name)
        params.append(MuscleParams(f_max=fmax, l_opt=0.2, width=0.5, v_max=1.0,
                                   k_passive=0.5 * fmax, tau_act=0.015, tau_deact=0.06))
        rows.append(row)
    rows = np.array(rows)
    rest = 0.2 + rows @ mid  # optimal length at mid-range posture
    return Morphology(
        name="arm3",
        links=links,
        floating_base=False,
        joint_names=joint_names,
        joint_limits=limits,
        moment_arms=rows,
        rest_lengths=rest,
        muscle_params=tuple(params),
        muscle_names=tuple(names),
        posture_indices=(0, 1, 2),
        tip=(2, 0.12),
    )


WALKER_SIM = SimConfig(joint_damping=2.0, limit_stiffness=300.0, limit_damping=10.0)
ARM_SIM = SimConfig(gravity=0.0, joint_damping=0.3, limit_stiffness=50.0, limit_damping=2.0)
WALKER_SUCCESS = 1.0  # m of forward progress before any fall
ARM_SUCCESS = -0.02  # minimum of -(position error + 0.5 * orientation error)
WALKER_K_BAR = 1.0e7
ARM_K_BAR = 2.0e6
# balance needs a longer look-ahead than reaching does
WALKER_PLANNER = {"horizon": 20}
WALKER_STANCE = (0.12, -0.05, 0.0, -0.12, -0.05, 0.0)
ARM_START = (0.3, 1.4, 0.0)


def _walker_state(morph: Morphology, terrain: Terrain) -> tuple[SystemState, float]:
    q = np.zeros(morph.n_q)
    q[3:] = WALKER_STANCE
    kin = morph.kin
    feet = kin.points(q, kin.C_contact)[:4]
    ground = terrain.height(feet[:, 0])
    q[1] = float(np.max(ground - feet[:, 1]))
    return make_state(morph, q), q[1] - float(terrain.height(0.0))


def _arm_state(morph: Morphology, obj_offset) -> tuple[SystemState, np.ndarray, float]:
    q = np.array(ARM_START)
    kin = morph.kin
    tip = kin.points(q, kin.C_tip)[0]
    tip_angle = float(kin.angles(q)[2])
    pose = np.array([tip[0] + obj_offset[0], tip[1] + obj_offset[1], tip_angle])
    return make_state(morph, q, obj_pose=pose), tip, tip_angle


def build_task(task_id: str, seed: int = 0):
    """Return ``(Morphology, Terrain, s0, TaskSpec)`` for a catalog task."""
    task = load_task(task_id, seed)
    return task.morphology, task.terrain, task.s0, task.spec


def load_task(task_id: str, seed: int = 0) -> Task:
    if task_id not in TASK_IDS:
        raise KeyError(f"unknown task_id {task_id!r}; choose from {', '.join(TASK_IDS)}")
    desc = DESCRIPTIONS[task_id]
    if task_id.startswith("walker"):
        injury = ()
        if task_id == "walker_injured":
            names = walker_morphology().muscle_names
            injury = tuple((names.index(n), INJURY_SCALE) for n in ("hamstring_r", "gastrocnemius_r"))
        if task_id == "walker_slope":
            terrain = Terrain("slope", slope_angle=SLOPE_ANGLE)
        elif task_id == "walker_rough":
            terrain = rough_terrain(seed)
        else:
            terrain = Terrain("flat")
        morph = walker_morphology(injury)
        s0, stand = _walker_state(morph, terrain)
        spec = TaskSpec(task_id, "biped7", terrain, desc, injury=injury)
        return Task(spec, morph, terrain, s0, WALKER_SIM, WALKER_K_BAR,
                    nominal_height=stand, fall_height=0.6 * stand,
                    success_threshold=WALKER_SUCCESS, seed=seed, planner=dict(WALKER_PLANNER))

    morph = arm_morphology()
    terrain = Terrain("flat")
    if task_id == "arm_reach":
        s0, tip, angle = _arm_state(morph, (0.06, 0.06))
        target = (round(float(tip[0]) + 0.15, 6), round(float(tip[1]) - 0.20, 6))
        spec = TaskSpec(task_id, "arm3", terrain, desc, horizon_s=4.0, target_position=target)
    else:
        s0, tip, angle = _arm_state(morph, (0.06, 0.06))
        pose = s0.obj.pose
        target = (round(float(pose[0]), 6), round(float(pose[1]), 6))
        spec = TaskSpec(task_id, "arm3", terrain, desc, horizon_s=4.0, target_position=target,
                        target_orientation=round(angle + 0.6, 6))
    return Task(spec, morph, terrain, s0, ARM_SIM, ARM_K_BAR, nominal_height=1.0,
                fall_height=-np.inf, success_threshold=ARM_SUCCESS, seed=seed)
