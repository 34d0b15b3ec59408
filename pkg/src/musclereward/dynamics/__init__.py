from .chain import ContactPoint, Kinematics, Link, Morphology
from .muscles import (
    ControlClampWarning,
    MuscleParams,
    SimulationError,
    activation_step,
    force_length,
    force_velocity,
    muscle_force,
    passive_force,
)
from .sim import FLAT, SimConfig, advance, contact_forces, control_step, dynamics_step, muscle_geometry
from .state import JointState, MuscleState, ObjectState, SystemState, make_state
from .trajectory import Trajectory
from .rollout import constant_policy, rollout, zero_policy
