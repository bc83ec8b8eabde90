"""Fixed-step joint-space simulation of a 3-joint desk manipulator.

Joint 1 rotates about the vertical axis, joints 2 and 3 move in the
gravity plane. Dynamics are joint-wise decoupled: diagonal inertia,
viscous friction, gravity on joints 2-3. Pen-on-paper contact is a
unilateral penalty force on the tip, coupled into the joints through
the kinematic Jacobian transpose.

Sign convention for ``tau_ext`` in :func:`step_joint_dynamics`: the
torque the robot exerts on its surroundings (hand or paper). The torque
the environment applies back to the robot is its negative, so callers
pass ``-contact_torque(...)`` for a robot in contact and ``-tau_hand``
for a robot held by an operator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from .errors import NonFinite

# A JointVector is a float64 array of shape (3,): one value per joint.
JointVector = np.ndarray


def jv(j1: float, j2: float, j3: float) -> JointVector:
    return np.array([j1, j2, j3], dtype=float)


@dataclass(frozen=True)
class RobotParams:
    """Per-joint inertia, viscous friction, gravity coefficients, and link geometry."""

    inertia: JointVector
    friction: JointVector
    gravity_coeff: JointVector
    l2: float = 0.135
    l3: float = 0.135
    base_height: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        object.__setattr__(self, "friction", np.asarray(self.friction, dtype=float))
        object.__setattr__(self, "gravity_coeff", np.asarray(self.gravity_coeff, dtype=float))
        if self.inertia.shape != (3,) or self.friction.shape != (3,) or self.gravity_coeff.shape != (3,):
            raise ValueError("inertia, friction, gravity_coeff must have shape (3,)")
        if not np.all(self.inertia > 0):
            raise ValueError("all inertias must be > 0")
        if not np.all(self.friction >= 0):
            raise ValueError("frictions must be >= 0")
        if self.l2 <= 0 or self.l3 <= 0:
            raise ValueError("link lengths must be > 0")

    @classmethod
    def default(cls) -> "RobotParams":
        return cls(
            inertia=jv(0.003, 0.003, 0.003),
            friction=jv(0.05, 0.01, 0.01),
            gravity_coeff=jv(0.0, 0.15, 0.08),
        )


@dataclass(frozen=True)
class Environment:
    """Paper height and pen/paper contact model parameters.

    Contact is a unilateral penalty in the vertical direction plus a
    smooth Coulomb drag (``friction_mu`` times the normal force) against
    the horizontal tip velocity while the pen is on the paper.
    """

    paper_height: float
    contact_stiffness: float = 2000.0
    contact_damping: float = 5.0
    pen_length: float = 0.0
    friction_mu: float = 0.3
    friction_v_eps: float = 0.01

    def __post_init__(self):
        if not (0.01 <= self.paper_height <= 0.10):
            raise ValueError(f"paper_height {self.paper_height} outside [0.01, 0.10] m")
        if self.contact_stiffness <= 0:
            raise ValueError("contact_stiffness must be > 0")
        if self.contact_damping < 0:
            raise ValueError("contact_damping must be >= 0")
        if self.friction_mu < 0 or self.friction_v_eps <= 0:
            raise ValueError("friction_mu must be >= 0 and friction_v_eps > 0")

    def with_height(self, paper_height: float) -> "Environment":
        return replace(self, paper_height=paper_height)


@dataclass
class RobotState:
    """Response triple (theta, theta_dot, tau) of one robot at one instant.

    ``tau`` carries the ground-truth reaction torque when produced by
    :func:`step_joint_dynamics`, or an observer estimate when assembled by
    the measurement pipeline.
    """

    theta: JointVector
    theta_dot: JointVector
    tau: JointVector

    @classmethod
    def at_rest(cls, theta: JointVector) -> "RobotState":
        return cls(np.asarray(theta, dtype=float).copy(), np.zeros(3), np.zeros(3))

    def copy(self) -> "RobotState":
        return RobotState(self.theta.copy(), self.theta_dot.copy(), self.tau.copy())


def forward_kinematics(theta: JointVector, params: RobotParams) -> np.ndarray:
    """Tip position (x, y, z) in meters.

    At theta = (0, 0, 0) the arm is fully extended horizontally along +x
    at ``base_height``.
    """
    t1, t2, t3 = theta
    c23 = math.cos(t2 + t3)
    r = params.l2 * math.cos(t2) + params.l3 * c23
    z = params.base_height + params.l2 * math.sin(t2) + params.l3 * math.sin(t2 + t3)
    return np.array([r * math.cos(t1), r * math.sin(t1), z])


def tip_jacobian(theta: JointVector, params: RobotParams, extra_l3: float = 0.0) -> np.ndarray:
    """Analytic 3x3 Jacobian d(tip)/d(theta).

    ``extra_l3`` extends the last link (pen mounted colinearly with it).
    """
    t1, t2, t3 = theta
    l2 = params.l2
    l3 = params.l3 + extra_l3
    c1, s1 = math.cos(t1), math.sin(t1)
    c2, s2 = math.cos(t2), math.sin(t2)
    c23, s23 = math.cos(t2 + t3), math.sin(t2 + t3)
    r = l2 * c2 + l3 * c23
    dr2 = -l2 * s2 - l3 * s23
    dr3 = -l3 * s23
    dz2 = l2 * c2 + l3 * c23
    dz3 = l3 * c23
    return np.array(
        [
            [-r * s1, c1 * dr2, c1 * dr3],
            [r * c1, s1 * dr2, s1 * dr3],
            [0.0, dz2, dz3],
        ]
    )


def pen_tip(theta: JointVector, params: RobotParams, env: Environment) -> np.ndarray:
    """Contact-point position: tip of the pen extending link 3 by ``pen_length``."""
    if env.pen_length == 0.0:
        return forward_kinematics(theta, params)
    extended = replace(params, l3=params.l3 + env.pen_length)
    return forward_kinematics(theta, extended)


def gravity_torque(theta: JointVector, params: RobotParams) -> JointVector:
    """Gravity loading per joint; joint 1 (vertical axis) is always zero.

    Matches the potential energy U = gc2*sin(t2) + gc3*sin(t2+t3), i.e.
    tau_g = dU/dtheta.
    """
    gc = params.gravity_coeff
    c2 = math.cos(theta[1])
    c23 = math.cos(theta[1] + theta[2])
    return np.array([0.0, gc[1] * c2 + gc[2] * c23, gc[2] * c23])


def _contact(theta, theta_dot, params, env):
    """(force on tip, normal force, Jacobian) of the pen/paper interaction."""
    tip = pen_tip(theta, params, env)
    if tip[2] >= env.paper_height:
        return None, 0.0, None
    jac = tip_jacobian(theta, params, extra_l3=env.pen_length)
    tip_vel = jac @ theta_dot
    f_n = env.contact_stiffness * (env.paper_height - tip[2]) - env.contact_damping * tip_vel[2]
    if f_n <= 0.0:
        return None, 0.0, None
    force = np.array([0.0, 0.0, f_n])
    if env.friction_mu > 0.0:
        speed = math.hypot(tip_vel[0], tip_vel[1])
        if speed > 0.0:
            drag = env.friction_mu * f_n * math.tanh(speed / env.friction_v_eps)
            force[0] = -drag * tip_vel[0] / speed
            force[1] = -drag * tip_vel[1] / speed
    return force, float(f_n), jac


def contact_force_vector(
    theta: JointVector, theta_dot: JointVector, params: RobotParams, env: Environment
) -> tuple[np.ndarray, float]:
    """Force (x, y, z) the paper applies to the pen tip, and its normal part.

    The normal component is the unilateral penalty, always >= 0; when in
    contact, a smooth Coulomb term mu * f_n drags against the horizontal
    tip velocity.
    """
    force, f_n, _ = _contact(theta, theta_dot, params, env)
    return (np.zeros(3) if force is None else force), f_n


def contact_normal_force(
    theta: JointVector, theta_dot: JointVector, params: RobotParams, env: Environment
) -> float:
    """Unilateral normal force (N) the paper applies to the pen tip; >= 0."""
    return _contact(theta, theta_dot, params, env)[1]


def contact_torque(
    theta: JointVector, theta_dot: JointVector, params: RobotParams, env: Environment
) -> JointVector:
    """Joint torque the paper applies to the robot: J^T f_contact."""
    force, _, jac = _contact(theta, theta_dot, params, env)
    if force is None:
        return np.zeros(3)
    return jac.T @ force


def contact_wrench(
    theta: JointVector, theta_dot: JointVector, params: RobotParams, env: Environment
) -> tuple[JointVector, float]:
    """(joint torque on robot, normal force) in one kinematics evaluation."""
    force, f_n, jac = _contact(theta, theta_dot, params, env)
    if force is None:
        return np.zeros(3), 0.0
    return jac.T @ force, f_n


def step_joint_dynamics(
    state: RobotState,
    tau_ref: JointVector,
    tau_ext: JointVector,
    params: RobotParams,
    dt: float,
) -> RobotState:
    """One semi-implicit Euler step of J*acc = tau_ref - tau_ext - D*vel - tau_g.

    The returned state's ``tau`` field holds ``tau_ext`` (ground-truth
    reaction, for test oracles only; controllers never read it).
    """
    with np.errstate(invalid="ignore", over="ignore"):
        acc = (
            tau_ref - tau_ext - params.friction * state.theta_dot - gravity_torque(state.theta, params)
        ) / params.inertia
        theta_dot = state.theta_dot + dt * acc
        theta = state.theta + dt * theta_dot
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(theta_dot))):
        raise NonFinite("joint dynamics step produced a non-finite state")
    return RobotState(theta, theta_dot, np.asarray(tau_ext, dtype=float).copy())
