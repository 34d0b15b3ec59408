"""Planar articulated chains: morphology description and batched kinematics.

A chain is a tree of rigid links. Each link hangs from a point on its parent
(``attach`` metres along the parent axis) and its own axis direction is
``(sin phi, -cos phi)``, so ``phi = 0`` points straight down. The absolute
angle of a link is its fixed ``offset`` plus the sum of joint coordinates on
the path from the root. A floating base adds the root point ``(x, y)`` as the
first two generalised coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .muscles import MuscleParams, MuscleTable


@dataclass(frozen=True)
class Link:
    name: str
    length: float
    mass: float
    inertia: float  # about the centre of mass
    parent: int = -1
    attach: float = 0.0
    offset: float = 0.0
    com: float | None = None  # defaults to mid-length

    @property
    def com_s(self) -> float:
        return 0.5 * self.length if self.com is None else self.com


@dataclass(frozen=True)
class ContactPoint:
    name: str
    link: int
    s: float


@dataclass(frozen=True, eq=False)
class Morphology:
    name: str
    links: tuple[Link, ...]
    floating_base: bool
    joint_names: tuple[str, ...]
    joint_limits: np.ndarray  # (d_q, 2), +-inf for free coordinates
    moment_arms: np.ndarray  # (d_u, d_q), rho
    rest_lengths: np.ndarray  # (d_u,)
    muscle_params: tuple[MuscleParams, ...]
    muscle_names: tuple[str, ...]
    posture_indices: tuple[int, ...]
    contact_points: tuple[ContactPoint, ...] = ()
    feet: tuple[tuple[int, ...], ...] = ()  # contact-point indices grouped per foot
    tip: tuple[int, float] | None = None  # end effector (link, s)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        nq = self.n_q
        rho = np.asarray(self.moment_arms, dtype=float).reshape(-1, nq)
        object.__setattr__(self, "moment_arms", rho)
        object.__setattr__(self, "rest_lengths", np.asarray(self.rest_lengths, dtype=float).reshape(-1))
        object.__setattr__(self, "joint_limits", np.asarray(self.joint_limits, dtype=float).reshape(nq, 2))
        if len(self.joint_names) != nq:
            raise ValueError(f"expected {nq} joint names, got {len(self.joint_names)}")
        du = rho.shape[0]
        if not (len(self.rest_lengths) == len(self.muscle_params) == len(self.muscle_names) == du):
            raise ValueError("muscle arrays disagree in length")
        if du and np.any(np.all(rho == 0.0, axis=1)):
            raise ValueError("every muscle needs a nonzero moment arm")
        if len(self.posture_indices) > nq:
            raise ValueError("more posture coordinates than joints")
        for i in self.posture_indices:
            if not 0 <= i < nq:
                raise ValueError(f"posture index {i} out of range")
        for k, link in enumerate(self.links):
            if k == 0 and link.parent != -1:
                raise ValueError("link 0 must be the root")
            if k > 0 and not 0 <= link.parent < k:
                raise ValueError("links must be listed parent-first")

    @property
    def base_dofs(self) -> int:
        return 2 if self.floating_base else 0

    @property
    def n_q(self) -> int:
        return self.base_dofs + len(self.links)

    @property
    def n_u(self) -> int:
        return self.moment_arms.shape[0]

    @property
    def d_z(self) -> int:
        return len(self.posture_indices)

    @property
    def link_lengths(self) -> np.ndarray:
        return np.array([lk.length for lk in self.links])

    @property
    def link_masses(self) -> np.ndarray:
        return np.array([lk.mass for lk in self.links])

    @property
    def link_inertias(self) -> np.ndarray:
        return np.array([lk.inertia for lk in self.links])

    @property
    def muscle_jacobian(self) -> np.ndarray:
        """J_m = dl/dq, constant for the affine length model."""
        return -self.moment_arms

    @cached_property
    def muscles(self) -> MuscleTable:
        return MuscleTable.from_params(self.muscle_params)

    @cached_property
    def kin(self) -> "Kinematics":
        return Kinematics(self)

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)


class Kinematics:
    """Precomputed tree tables; every method broadcasts over leading batch axes."""

    def __init__(self, morph: Morphology):
        self.morph = morph
        nb = len(morph.links)
        nq = morph.n_q
        self.nb, self.nq = nb, nq
        base = morph.base_dofs
        A = np.zeros((nb, nq))
        for k, link in enumerate(morph.links):
            j = k
            while j >= 0:
                A[k, base + j] = 1.0
                j = morph.links[j].parent
        self.A = A
        self.offset = np.array([lk.offset for lk in morph.links])
        self.masses = morph.link_masses
        self.inertias = morph.link_inertias
        self.total_mass = float(self.masses.sum())
        self.M_rot = (A.T * self.inertias) @ A

        self.C_com = np.stack([self.point_row(k, lk.com_s) for k, lk in enumerate(morph.links)])
        if morph.contact_points:
            self.C_contact = np.stack([self.point_row(c.link, c.s) for c in morph.contact_points])
        else:
            self.C_contact = np.zeros((0, nb))
        ends = []
        for k, lk in enumerate(morph.links):
            ends.append(self.point_row(k, 0.0))
            ends.append(self.point_row(k, lk.length))
        self.C_ends = np.stack(ends)
        self.C_tip = self.point_row(*morph.tip)[None] if morph.tip is not None else None

    def point_row(self, link: int, s: float) -> np.ndarray:
        row = np.zeros(self.nb)
        row[link] += s
        child = link
        parent = self.morph.links[child].parent
        while parent >= 0:
            row[parent] += self.morph.links[child].attach
            child, parent = parent, self.morph.links[parent].parent
        return row

    def angles(self, q):
        return q @ self.A.T + self.offset

    def base(self, q):
        if self.morph.floating_base:
            return q[..., 0:2]
        return np.zeros(q.shape[:-1] + (2,))

    def points(self, q, C, phi=None):
        if phi is None:
            phi = self.angles(q)
        d = np.stack([np.sin(phi), -np.cos(phi)], axis=-1)
        return self.base(q)[..., None, :] + C @ d

    def point_state(self, q, qdot, C):
        """Positions, Jacobians (..., P, 2, nq) and velocity-product accelerations."""
        phi = self.angles(q)
        omega = qdot @ self.A.T
        s, c = np.sin(phi), np.cos(phi)
        d = np.stack([s, -c], axis=-1)
        dp = np.stack([c, s], axis=-1)
        pos = self.base(q)[..., None, :] + C @ d
        # T[..., k, x, j] = dp[k, x] * A[k, j]
        T = dp[..., :, :, None] * self.A[:, None, :]
        lead = T.shape[:-3]
        J = (C @ T.reshape(lead + (self.nb, 2 * self.nq))).reshape(lead + (C.shape[0], 2, self.nq))
        if self.morph.floating_base:
            J[..., 0, 0] += 1.0
            J[..., 1, 1] += 1.0
        bias = -(C @ ((omega**2)[..., None] * d))
        return pos, J, bias

    def velocities(self, J, qdot):
        return np.einsum("...pxj,...j->...px", J, qdot)

    def com(self, q):
        pts = self.points(q, self.C_com)
        return np.einsum("b,...bx->...x", self.masses, pts) / self.total_mass

    def mass_matrix(self, q, J_com=None):
        if J_com is None:
            _, J_com, _ = self.point_state(q, np.zeros_like(q), self.C_com)
        sw = np.sqrt(self.masses)[:, None, None]
        Jw = (J_com * sw).reshape(J_com.shape[:-3] + (2 * self.nb, self.nq))
        return np.swapaxes(Jw, -1, -2) @ Jw + self.M_rot

    def energy(self, q, qdot, gravity: float):
        """Kinetic plus gravitational potential energy."""
        M = self.mass_matrix(q)
        kinetic = 0.5 * np.einsum("...i,...ij,...j->...", qdot, M, qdot)
        com_y = self.points(q, self.C_com)[..., 1]
        return kinetic + gravity * com_y @ self.masses
