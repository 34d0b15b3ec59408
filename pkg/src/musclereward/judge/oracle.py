"""Deterministic judge: task scores, pairwise comparison and rule-based feedback."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..environments import load_task
from ..reward.features import wrap_angle
from ..reward.program import TERM_LIBRARY
from .feedback import Feedback, MotionDescription, Suggestion, Verdict

ORIENTATION_WEIGHT = 0.5  # beta in -(position_error + beta * orientation_error)
TARGET_SPEED = 1.0  # m/s; progress below half of this is flagged
EFFORT_LIMIT = 0.2  # mean squared command per muscle
LEAN_LIMIT = 0.3  # rad


@lru_cache(maxsize=32)
def _task(task_id: str, seed: int):
    return load_task(task_id, seed)


def task_for(desc: MotionDescription):
    return _task(desc.task_id, desc.seed)


@dataclass(frozen=True)
class Diagnostics:
    score: float
    fall_index: int | None = None  # first fallen row
    fall_time: float | None = None
    distance: float = 0.0
    mean_effort: float = 0.0
    max_lean: float = 0.0
    position_error: float = 0.0
    orientation_error: float = 0.0
    grasped: bool = True


def _locomotion(task, traj) -> Diagnostics:
    x0 = float(traj.initial.q[0])
    x = traj.q[:, 0]
    h = traj.q[:, 1] - task.terrain.height(x)
    fallen = np.flatnonzero(h < task.fall_height)
    if len(fallen):
        k = int(fallen[0])
    elif traj.truncated:
        k = len(traj) - 1
    else:
        k = None
    end = len(traj) - 1 if k is None else k
    distance = float(x[end] - x0)
    upto = slice(0, end + 1)
    effort = float(np.mean(np.sum(traj.u[upto] ** 2, axis=1)) / max(1, traj.u.shape[1]))
    lean = float(np.max(np.abs(traj.q[upto, 2])))
    fall_time = None if k is None else float(traj.t[k])
    return Diagnostics(distance, k, fall_time, distance, effort, lean)


def _manipulation(task, traj) -> Diagnostics:
    pose = traj.obj_pose[-1]
    target = np.asarray(task.spec.target_position)
    pos = float(np.linalg.norm(pose[:2] - target))
    ori = 0.0
    if task.spec.target_orientation is not None:
        ori = float(abs(wrap_angle(pose[2] - task.spec.target_orientation)))
    effort = float(np.mean(np.sum(traj.u ** 2, axis=1)) / max(1, traj.u.shape[1]))
    score = -(pos + ORIENTATION_WEIGHT * ori)
    return Diagnostics(score, mean_effort=effort, position_error=pos, orientation_error=ori,
                       grasped=bool(np.any(traj.obj_grasped)))


def diagnose(desc: MotionDescription, trajectory) -> Diagnostics:
    if len(trajectory) == 0:
        raise ValueError("trajectory is empty")
    task = task_for(desc)
    if task.spec.is_manipulation:
        return _manipulation(task, trajectory)
    return _locomotion(task, trajectory)


def oracle_score(desc: MotionDescription, trajectory) -> float:
    """Forward displacement up to the first fall (walkers), or minus the final pose error (arm)."""
    return diagnose(desc, trajectory).score


def _suggest(program, name: str, action: str = "increase") -> Suggestion:
    if program is not None and name in program.names:
        return Suggestion(name, action)
    return Suggestion(name, "add", None, TERM_LIBRARY[name])


def critique(desc: MotionDescription, trajectory, program) -> Feedback:
    """Rule table: detect problems, rank them by severity and suggest term changes."""
    task = task_for(desc)
    d = diagnose(desc, trajectory)
    success = d.score >= task.success_threshold
    found = []  # (severity, issue text, suggestions)
    if task.spec.is_manipulation:
        if not success:
            if not d.grasped:
                found.append((2.0, "The hand never reaches the object, so it is never picked up.",
                              [_suggest(program, "grasp_distance")]))
            weighted_ori = ORIENTATION_WEIGHT * d.orientation_error
            if d.position_error >= weighted_ori:
                found.append((1.0, f"The object ends {d.position_error:.3f} m from the target position.",
                              [_suggest(program, "target_position_error")]))
            else:
                found.append((1.0, f"The object ends {d.orientation_error:.3f} rad away from the target angle.",
                              [_suggest(program, "target_orientation_error")]))
    else:
        horizon = task.spec.horizon_s
        if d.fall_time is not None:
            found.append((1.0 + (1.0 - d.fall_time / horizon),
                          f"The walker falls at t={d.fall_time:.2f} s after covering {d.distance:.2f} m.",
                          [_suggest(program, "balance"), _suggest(program, "height")]))
        wanted = 0.5 * TARGET_SPEED * horizon
        if d.distance < wanted:
            found.append((min(1.0, (wanted - d.distance) / wanted),
                          f"Forward progress is low: {d.distance:.2f} m against a goal of about {wanted:.1f} m.",
                          [_suggest(program, "forward_velocity")]))
        if d.max_lean > LEAN_LIMIT:
            found.append(((d.max_lean - LEAN_LIMIT) / LEAN_LIMIT,
                          f"The torso leans up to {d.max_lean:.2f} rad from vertical.",
                          [_suggest(program, "torso_uprightness")]))
    if d.mean_effort > EFFORT_LIMIT:
        found.append(((d.mean_effort - EFFORT_LIMIT) / EFFORT_LIMIT,
                      f"Muscle effort is high (mean squared command {d.mean_effort:.3f}).",
                      [_suggest(program, "effort")]))
    found.sort(key=lambda item: -item[0])
    issues = " ".join(text for _, text, _ in found) or "No problems detected."
    suggestions, seen = [], set()
    for _, _, items in found:
        for s in items:
            if s.term_name not in seen:
                seen.add(s.term_name)
                suggestions.append(s)
    return Feedback(bool(success), issues, tuple(suggestions))


def compare(desc: MotionDescription, challenger, incumbent) -> Verdict:
    """``first`` iff the challenger scores strictly higher; ties keep the incumbent."""
    if incumbent is None:
        return Verdict("first", "no incumbent yet")
    a = oracle_score(desc, challenger)
    b = oracle_score(desc, incumbent)
    choice = "first" if a > b else "second"
    return Verdict(choice, f"oracle scores {a:.6f} (first) vs {b:.6f} (second)")


class OracleJudge:
    mode = "oracle"

    def compare(self, desc, challenger, incumbent, frames=None, scope: str = "") -> Verdict:
        return compare(desc, challenger, incumbent)

    def critique(self, desc, trajectory, program, frames=None, scope: str = "") -> Feedback:
        return critique(desc, trajectory, program)
