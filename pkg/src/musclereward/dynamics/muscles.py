"""First-order muscle actuators: activation dynamics and force generation.

All functions broadcast over leading batch dimensions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class SimulationError(RuntimeError):
    pass


class ControlClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MuscleParams:
    f_max: float
    l_opt: float
    width: float = 0.5
    v_max: float = 1.5
    k_passive: float = 0.0
    tau_act: float = 0.015
    tau_deact: float = 0.06

    def __post_init__(self):
        for name in ("f_max", "l_opt", "width", "v_max", "tau_act", "tau_deact"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MuscleParams.{name} must be > 0")
        if self.k_passive < 0:
            raise ValueError("MuscleParams.k_passive must be >= 0")
        if self.tau_act > self.tau_deact:
            raise ValueError("tau_act must not exceed tau_deact")

    def scaled(self, strength: float) -> "MuscleParams":
        """Copy with f_max multiplied by ``strength`` (injury model)."""
        return MuscleParams(
            self.f_max * strength, self.l_opt, self.width, self.v_max,
            self.k_passive, self.tau_act, self.tau_deact,
        )


@dataclass(frozen=True)
class MuscleTable:
    """Column view of a list of MuscleParams for vectorised evaluation."""

    f_max: np.ndarray
    l_opt: np.ndarray
    width: np.ndarray
    v_max: np.ndarray
    k_passive: np.ndarray
    tau_act: np.ndarray
    tau_deact: np.ndarray

    @classmethod
    def from_params(cls, params) -> "MuscleTable":
        params = list(params)
        cols = {}
        for name in cls.__dataclass_fields__:
            cols[name] = np.array([getattr(p, name) for p in params], dtype=float)
        return cls(**cols)


def _check_finite(*arrays):
    for x in arrays:
        if not np.all(np.isfinite(x)):
            raise SimulationError("non-finite input to muscle model")


def activation_step(a, u, params, dt: float, check: bool = True):
    """Advance activation by ``dt`` with the exact solution of da/dt = (u - a)/tau.

    ``tau`` is ``tau_act`` while activating (u > a) and ``tau_deact`` otherwise,
    held constant over the step. Controls outside [0, 1] are clamped and a
    ``ControlClampWarning`` is emitted.
    """
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    if check:
        _check_finite(a, u)
        if np.any((u < 0.0) | (u > 1.0)):
            warnings.warn("neural control outside [0, 1] clamped", ControlClampWarning, stacklevel=2)
            u = np.clip(u, 0.0, 1.0)
    tau = np.where(u > a, params.tau_act, params.tau_deact)
    out = u + (a - u) * np.exp(-dt / tau)
    return np.clip(out, 0.0, 1.0)


def force_length(l, params):
    return np.exp(-(((l - params.l_opt) / (params.width * params.l_opt)) ** 2))


def force_velocity(v, params):
    # v is the length rate; shortening (v < 0) lowers force and reaches zero at -v_max
    return np.clip(1.0 + v / params.v_max, 0.0, 1.5)


def passive_force(l, params):
    return params.k_passive * np.maximum(0.0, l - params.l_opt)


def muscle_force(l, v, a, params, check: bool = True):
    """Tensile muscle force (N), returned as a non-positive number."""
    l = np.asarray(l, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    if check:
        _check_finite(l, v, a)
        if np.any(l <= 0):
            raise SimulationError("muscle length must be positive")
    active = a * params.f_max * force_length(l, params) * force_velocity(v, params)
    return -(active + passive_force(l, params))
