"""Rollout records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .state import JointState, MuscleState, ObjectState, SystemState


@dataclass
class Trajectory:
    """Post-step states with the control that produced them and the step rewards.

    Row ``i`` holds the state reached after applying ``u[i]`` for one control
    period starting from row ``i - 1`` (or from ``initial`` for ``i = 0``).
    """

    initial: SystemState
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    a: np.ndarray
    u: np.ndarray
    terms: dict[str, np.ndarray]
    total: np.ndarray
    obj_pose: np.ndarray | None = None
    obj_grasped: np.ndarray | None = None
    truncated: bool = False
    limit_hits: int = 0
    control_dt: float = 0.01
    joint_names: tuple[str, ...] = ()
    muscle_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def horizon(self) -> int:
        return len(self)

    @property
    def duration(self) -> float:
        return len(self) * self.control_dt

    def state(self, i: int, morph) -> SystemState:
        q, qd = self.q[i].copy(), self.qdot[i].copy()
        l = morph.rest_lengths - q @ morph.moment_arms.T
        v = -qd @ morph.moment_arms.T
        obj = None
        if self.obj_pose is not None:
            obj = ObjectState(self.obj_pose[i].copy(), np.array(self.obj_grasped[i]), np.array(0.0))
        return SystemState(JointState(q, qd), MuscleState(self.a[i].copy(), l, v), float(self.t[i]), obj)

    def header(self) -> list[str]:
        cols = ["t"]
        cols += [f"q_{n}" for n in self.joint_names]
        cols += [f"qdot_{n}" for n in self.joint_names]
        cols += [f"a_{n}" for n in self.muscle_names]
        cols += [f"u_{n}" for n in self.muscle_names]
        if self.obj_pose is not None:
            cols += ["obj_x", "obj_y", "obj_theta", "obj_grasped"]
        cols.append("reward")
        cols += [f"r_{n}" for n in self.terms]
        return cols

    def rows(self):
        for i in range(len(self)):
            row = [self.t[i], *self.q[i], *self.qdot[i], *self.a[i], *self.u[i]]
            if self.obj_pose is not None:
                row += [*self.obj_pose[i], float(self.obj_grasped[i])]
            row.append(self.total[i])
            row += [v[i] for v in self.terms.values()]
            yield row

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows():
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv_text())
        return path

    @classmethod
    def from_csv(cls, path, initial: SystemState, control_dt: float | None = None) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(x) for x in row] for row in reader], dtype=float)
        if data.size == 0:
            data = data.reshape(0, len(header))
        col = {name: i for i, name in enumerate(header)}

        def take(prefix):
            names = [h[len(prefix):] for h in header if h.startswith(prefix)]
            idx = [col[prefix + n] for n in names]
            return tuple(names), data[:, idx]

        joint_names, q = take("q_")
        _, qdot = take("qdot_")
        muscle_names, a = take("a_")
        _, u = take("u_")
        term_names, term_vals = take("r_")
        obj_pose = obj_grasped = None
        if "obj_x" in col:
            obj_pose = data[:, [col["obj_x"], col["obj_y"], col["obj_theta"]]]
            obj_grasped = data[:, col["obj_grasped"]] > 0.5
        t = data[:, col["t"]]
        if control_dt is None:
            control_dt = float(t[1] - t[0]) if len(t) > 1 else 0.01
        return cls(
            initial=initial, t=t, q=q, qdot=qdot, a=a, u=u,
            terms={n: term_vals[:, k] for k, n in enumerate(term_names)},
            total=data[:, col["reward"]], obj_pose=obj_pose, obj_grasped=obj_grasped,
            control_dt=control_dt, joint_names=joint_names, muscle_names=muscle_names,
        )

    def frame_indices(self, rate: float) -> np.ndarray:
        """Row indices sampled at ``rate`` Hz, one per ``ceil(duration * rate)`` frame."""
        n = max(1, math.ceil(round(self.duration * rate, 9)))
        idx = np.floor(np.arange(n) * len(self) / n).astype(int)
        return np.clip(idx, 0, len(self) - 1)
