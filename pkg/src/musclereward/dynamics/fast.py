"""Compiled batch integrator.

A loop-level transcription of ``sim.dynamics_step`` for the planner's inner
loop, where the numpy version spends most of its time in array overhead.
The numpy code stays the reference; tests hold the two within round-off.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .state import JointState, MuscleState, ObjectState, SystemState

_FLAT, _SLOPE, _ROUGH = 0, 1, 2


def terrain_arrays(terrain):
    """``(kind, tan, x0, spacing, heights)`` for the kernel, or None if unsupported."""
    kind = getattr(terrain, "kind", "flat") if terrain is not None else "flat"
    if terrain is not None and not hasattr(terrain, "kind") and type(terrain).__name__ != "FlatGround":
        return None
    if kind == "flat":
        return _FLAT, 0.0, 0.0, 1.0, np.zeros(2)
    if kind == "slope":
        return _SLOPE, math.tan(terrain.slope_angle), 0.0, 1.0, np.zeros(2)
    if kind == "rough":
        return _ROUGH, 0.0, float(terrain.x0), float(terrain.spacing), np.asarray(terrain.heights, dtype=float)
    return None


@njit(cache=True)
def _ground(x, kind, tan, x0, spacing, heights):
    if kind == _FLAT:
        return 0.0, 0.0
    if kind == _SLOPE:
        return x * tan, tan
    n = heights.shape[0]
    last = x0 + spacing * (n - 1)
    i = int(math.floor((x - x0) / spacing))
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    grad = (heights[i + 1] - heights[i]) / spacing
    if x <= x0:
        return heights[0], 0.0
    if x >= last:
        return heights[n - 1], 0.0
    xi = x0 + spacing * i
    xj = x0 + spacing * (i + 1)
    h = (heights[i + 1] - heights[i]) / (xj - xi) * (x - xi) + heights[i]
    return h, grad


@njit(cache=True)
def _kernel(q, qd, a, u, pose, grasped, grip, has_obj,
            A, offset, masses, M_rot, C_com, C_con, C_tip, tip_link, floating,
            rho, rest, fmax, lopt, width, vmax, kpas, tau_a, tau_d,
            lo, hi, damp, ext, gravity, kc, cd, ctan, mu, lim_k, lim_d, grasp_r,
            tkind, ttan, tx0, tsp, theights, dt, nsub, hit):
    n, nq = q.shape
    nb = A.shape[0]
    nu = rho.shape[0]
    npc = C_con.shape[0]
    phi = np.empty(nb)
    om = np.empty(nb)
    dx = np.empty(nb)
    dy = np.empty(nb)
    ex = np.empty(nb)
    ey = np.empty(nb)
    Jx = np.empty(nq)
    Jy = np.empty(nq)
    M = np.empty((nq, nq))
    rhs = np.empty(nq)
    L = np.empty((nq, nq))
    y = np.empty(nq)
    qdd = np.empty(nq)
    for s in range(n):
        for _ in range(nsub):
            # activation
            for m in range(nu):
                tau = tau_a[m] if u[s, m] > a[s, m] else tau_d[m]
                v_ = u[s, m] + (a[s, m] - u[s, m]) * math.exp(-dt / tau)
                a[s, m] = min(max(v_, 0.0), 1.0)
            for j in range(nq):
                rhs[j] = ext[j]
            # muscles
            for m in range(nu):
                l = rest[m]
                v = 0.0
                for j in range(nq):
                    l -= rho[m, j] * q[s, j]
                    v -= rho[m, j] * qd[s, j]
                z = (l - lopt[m]) / (width[m] * lopt[m])
                fl = math.exp(-(z * z))
                fv = min(max(1.0 + v / vmax[m], 0.0), 1.5)
                fp = kpas[m] * max(0.0, l - lopt[m])
                f = -(a[s, m] * fmax[m] * fl * fv + fp)
                for j in range(nq):
                    rhs[j] -= f * rho[m, j]
            # kinematics
            for k in range(nb):
                p = offset[k]
                w = 0.0
                for j in range(nq):
                    p += A[k, j] * q[s, j]
                    w += A[k, j] * qd[s, j]
                phi[k] = p
                om[k] = w
                dx[k] = math.sin(p)
                dy[k] = -math.cos(p)
                ex[k] = math.cos(p)
                ey[k] = math.sin(p)
            bx = q[s, 0] if floating else 0.0
            by = q[s, 1] if floating else 0.0
            for i in range(nq):
                for j in range(nq):
                    M[i, j] = M_rot[i, j]
            # centres of mass: mass matrix and bias/gravity forces
            for b in range(nb):
                ax = 0.0
                ay = 0.0
                for j in range(nq):
                    Jx[j] = 0.0
                    Jy[j] = 0.0
                for k in range(nb):
                    c = C_com[b, k]
                    if c != 0.0:
                        ax -= c * om[k] * om[k] * dx[k]
                        ay -= c * om[k] * om[k] * dy[k]
                        for j in range(nq):
                            if A[k, j] != 0.0:
                                Jx[j] += c * ex[k] * A[k, j]
                                Jy[j] += c * ey[k] * A[k, j]
                if floating:
                    Jx[0] += 1.0
                    Jy[1] += 1.0
                ay += gravity
                mb = masses[b]
                for i in range(nq):
                    rhs[i] -= mb * (Jx[i] * ax + Jy[i] * ay)
                    for j in range(nq):
                        M[i, j] += mb * (Jx[i] * Jx[j] + Jy[i] * Jy[j])
            # contacts
            for p_ in range(npc):
                px = bx
                py = by
                for j in range(nq):
                    Jx[j] = 0.0
                    Jy[j] = 0.0
                for k in range(nb):
                    c = C_con[p_, k]
                    if c != 0.0:
                        px += c * dx[k]
                        py += c * dy[k]
                        for j in range(nq):
                            if A[k, j] != 0.0:
                                Jx[j] += c * ex[k] * A[k, j]
                                Jy[j] += c * ey[k] * A[k, j]
                if floating:
                    Jx[0] += 1.0
                    Jy[1] += 1.0
                h, hs = _ground(px, tkind, ttan, tx0, tsp, theights)
                inv = 1.0 / math.sqrt(1.0 + hs * hs)
                depth = (h - py) * inv
                if depth > 0:
                    vx = 0.0
                    vy = 0.0
                    for j in range(nq):
                        vx += Jx[j] * qd[s, j]
                        vy += Jy[j] * qd[s, j]
                    nx = -hs * inv
                    ny = inv
                    tx = inv
                    ty = hs * inv
                    vn = vx * nx + vy * ny
                    vt = vx * tx + vy * ty
                    fn = max(0.0, kc * depth - cd * vn)
                    sg = 0.0
                    if vt > 0:
                        sg = 1.0
                    elif vt < 0:
                        sg = -1.0
                    ft = -sg * min(mu * fn, ctan * abs(vt))
                    fx = fn * nx + ft * tx
                    fy = fn * ny + ft * ty
                    for j in range(nq):
                        rhs[j] += Jx[j] * fx + Jy[j] * fy
            # joint limits and damping
            for j in range(nq):
                over = max(0.0, q[s, j] - hi[j])
                under = max(0.0, lo[j] - q[s, j])
                if over > 0 or under > 0:
                    hit[s] = True
                    rhs[j] -= lim_k * (over - under) + lim_d * qd[s, j]
                rhs[j] -= damp[j] * qd[s, j]
            # Cholesky solve; a failure marks the sample as diverged
            bad = False
            for i in range(nq):
                for j in range(i + 1):
                    acc = M[i, j]
                    for k in range(j):
                        acc -= L[i, k] * L[j, k]
                    if i == j:
                        if not acc > 0:
                            bad = True
                            acc = 1.0
                        L[i, i] = math.sqrt(acc)
                    else:
                        L[i, j] = acc / L[j, j]
            for i in range(nq):
                acc = rhs[i]
                for k in range(i):
                    acc -= L[i, k] * y[k]
                y[i] = acc / L[i, i]
            for i in range(nq - 1, -1, -1):
                acc = y[i]
                for k in range(i + 1, nq):
                    acc -= L[k, i] * qdd[k]
                qdd[i] = acc / L[i, i]
            if bad:
                for j in range(nq):
                    q[s, j] = np.nan
                    qd[s, j] = np.nan
                break
            for j in range(nq):
                qd[s, j] += dt * qdd[j]
                q[s, j] += dt * qd[s, j]
            if has_obj:
                tx_ = bx
                ty_ = by
                ang = offset[tip_link]
                for j in range(nq):
                    ang += A[tip_link, j] * q[s, j]
                for k in range(nb):
                    c = C_tip[k]
                    if c != 0.0:
                        p = offset[k]
                        for j in range(nq):
                            p += A[k, j] * q[s, j]
                        tx_ += c * math.sin(p)
                        ty_ += -c * math.cos(p)
                if not grasped[s]:
                    ddx = tx_ - pose[s, 0]
                    ddy = ty_ - pose[s, 1]
                    if math.sqrt(ddx * ddx + ddy * ddy) < grasp_r:
                        grip[s] = pose[s, 2] - ang
                        grasped[s] = True
                if grasped[s]:
                    pose[s, 0] = tx_
                    pose[s, 1] = ty_
                    pose[s, 2] = ang + grip[s]


def control_step(state: SystemState, u, morph, config, terrain=None) -> SystemState | None:
    """Compiled equivalent of ``sim.control_step`` (``check=False``).

    Returns None when the terrain type is not supported, so callers can fall
    back to numpy. A sample whose mass matrix stops being positive definite
    (only possible after divergence) comes back as NaN.
    """
    tarr = terrain_arrays(terrain)
    if tarr is None:
        return None
    single = not state.batch_shape
    q = np.array(np.atleast_2d(state.q), dtype=float)
    qd = np.array(np.atleast_2d(state.qdot), dtype=float)
    n, nq = q.shape
    a = np.array(state.a, dtype=float).reshape(n, -1)
    u = np.ascontiguousarray(np.broadcast_to(np.asarray(u, dtype=float), a.shape))
    has_obj = state.obj is not None and morph.tip is not None
    if has_obj:
        pose = np.array(state.obj.pose, dtype=float).reshape(n, 3)
        grasped = np.array(state.obj.grasped, dtype=bool).reshape(n)
        grip = np.array(state.obj.grip_angle, dtype=float).reshape(n)
    else:
        pose, grasped, grip = np.zeros((n, 3)), np.zeros(n, dtype=bool), np.zeros(n)
    kin = morph.kin
    mt = morph.muscles
    damp = np.full(nq, config.joint_damping)
    damp[: morph.base_dofs] = 0.0
    if morph.floating_base:
        damp[morph.base_dofs] = 0.0
    ext = np.zeros(nq) if config.external_torque is None else np.asarray(config.external_torque, dtype=float)
    tip_link, tip_row = 0, np.zeros(kin.nb)
    if morph.tip is not None:
        tip_link, tip_row = morph.tip[0], kin.C_tip[0]
    hit = np.zeros(n, dtype=bool)
    kind, tan, x0, spacing, heights = tarr
    _kernel(q, qd, a, u, pose, grasped, grip, has_obj,
                 kin.A, kin.offset, kin.masses, kin.M_rot, kin.C_com,
                 np.ascontiguousarray(kin.C_contact).reshape(-1, kin.nb), tip_row, tip_link,
                 morph.floating_base, morph.moment_arms, morph.rest_lengths,
                 mt.f_max, mt.l_opt, mt.width, mt.v_max, mt.k_passive, mt.tau_act, mt.tau_deact,
                 morph.joint_limits[:, 0].copy(), morph.joint_limits[:, 1].copy(), damp, ext,
                 config.gravity, config.contact_stiffness, config.contact_damping, config.tangential_damping,
                 config.friction_coeff, config.limit_stiffness, config.limit_damping,
                 config.grasp_radius, kind, tan, x0, spacing, heights,
                 config.dt, config.substeps, hit)
    l = morph.rest_lengths - q @ morph.moment_arms.T
    v = -qd @ morph.moment_arms.T
    obj = ObjectState(pose, grasped, grip) if has_obj else state.obj
    t = state.t
    for _ in range(config.substeps):
        t += config.dt
    if single:
        obj = ObjectState(pose[0], grasped[0], grip[0]) if has_obj else obj
        return SystemState(JointState(q[0], qd[0]), MuscleState(a[0], l[0], v[0]), t, obj, bool(hit[0]))
    return SystemState(JointState(q, qd), MuscleState(a, l, v), t, obj, hit)
