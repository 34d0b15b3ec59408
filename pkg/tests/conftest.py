from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from musclereward.dynamics import Link, Morphology, MuscleParams, SimConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pendulum(length=1.0, mass=1.0, inertia=1.0 / 12.0, rho=None, limits=(-10.0, 10.0), params=None):
    """One link hanging from a fixed pivot, optionally spanned by one muscle with moment arm ``rho``."""
    muscles = () if rho is None else (params or MuscleParams(f_max=100.0, l_opt=0.3),)
    return Morphology(
        name="pendulum",
        links=(Link("rod", length, mass, inertia),),
        floating_base=False,
        joint_names=("swing",),
        joint_limits=np.array([limits]),
        moment_arms=np.zeros((0, 1)) if rho is None else np.array([[rho]]),
        rest_lengths=np.zeros(0) if rho is None else np.array([0.3]),
        muscle_params=muscles,
        muscle_names=() if rho is None else ("m0",),
        posture_indices=(0,),
    )


FRICTIONLESS = SimConfig(joint_damping=0.0, contact_stiffness=0.0, contact_damping=0.0)


@pytest.fixture
def pend():
    return pendulum()
