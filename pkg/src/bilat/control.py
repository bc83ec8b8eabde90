"""Per-joint observers and the 4ch bilateral coupling law.

The controller measures joint angles only. Velocity comes from a
pseudo-derivative (first-order filtered differentiation), the total
non-reference torque from a disturbance observer (DOB), and the
external/contact torque from a reaction force observer (RFOB) that
subtracts modeled friction and gravity from the DOB estimate.

All observers run at the 1 ms control cycle and are realized as forward
Euler discretizations of first-order low-pass filters, so each is linear
time-invariant per joint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import JointVector, RobotParams, RobotState, gravity_torque


@dataclass(frozen=True)
class Gains:
    """Controller and observer gains.

    kp [1/s^2] and kd [1/s] act on position/velocity errors scaled by the
    joint inertia; kf is the dimensionless force-channel gain; g_dob and
    g_pd [rad/s] are the DOB and pseudo-derivative cutoffs.
    """

    kp: float = 400.0
    kd: float = 40.0
    kf: float = 1.0
    g_dob: float = 200.0
    g_pd: float = 200.0

    def __post_init__(self):
        for name in ("kp", "kd", "kf", "g_dob", "g_pd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"gain {name} must be > 0")


@dataclass
class ObserverState:
    """Low-pass accumulators for one robot; reset at episode start.

    The pseudo-derivative accumulator tracks the measured angle, so a
    reset seeds it with the initial pose (a zero seed would read a huge
    spurious velocity on the first cycle of any non-zero start).
    """

    pd_filt: JointVector = field(default_factory=lambda: np.zeros(3))
    dob_filt: JointVector = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def zeros(cls) -> "ObserverState":
        return cls()

    @classmethod
    def at_pose(cls, theta: JointVector) -> "ObserverState":
        return cls(pd_filt=np.asarray(theta, dtype=float).copy())


def pseudo_derivative(
    pd_filt: JointVector, theta: JointVector, g_pd: float, dt: float
) -> tuple[JointVector, JointVector]:
    """Filtered differentiation s*g/(s+g) of the measured angle.

    Returns (theta_dot_estimate, next_filter_state).
    """
    vel = g_pd * (theta - pd_filt)
    return vel, pd_filt + dt * vel


def dob_peek(dob_filt: JointVector, theta_dot: JointVector, inertia: JointVector, g_dob: float) -> JointVector:
    """Current disturbance estimate without advancing the filter state."""
    return dob_filt - g_dob * inertia * theta_dot


def dob_estimate(
    dob_filt: JointVector,
    tau_ref: JointVector,
    theta_dot: JointVector,
    inertia: JointVector,
    g_dob: float,
    dt: float,
) -> tuple[JointVector, JointVector]:
    """Disturbance observer update.

    Realizes tau_dis_hat = LPF(tau_ref + g*J*vel) - g*J*vel, the estimate
    of every torque on the joint other than tau_ref. The returned estimate
    is causal: it reflects inputs up to the previous cycle plus the current
    velocity, so it can be computed before tau_ref is finalized (see
    :func:`dob_peek`) and committed after.
    """
    tau_dis = dob_peek(dob_filt, theta_dot, inertia, g_dob)
    next_filt = dob_filt + dt * g_dob * (tau_ref + g_dob * inertia * theta_dot - dob_filt)
    return tau_dis, next_filt


def rfob_torque(
    tau_dis_hat: JointVector, theta: JointVector, theta_dot: JointVector, params: RobotParams
) -> JointVector:
    """External torque estimate: DOB output minus modeled friction and gravity."""
    return tau_dis_hat - params.friction * theta_dot - gravity_torque(theta, params)


def bilateral_refs(
    master: RobotState, slave: RobotState, gains: Gains, inertia: JointVector
) -> tuple[JointVector, JointVector]:
    """4ch bilateral coupling: drive theta_m - theta_s to 0 and tau_m + tau_s to 0.

    Both input states must carry observer-derived torque responses in
    their ``tau`` fields. The position-error terms of the two outputs are
    exact negatives; the force terms are identical.
    """
    e = slave.theta - master.theta
    e_dot = slave.theta_dot - master.theta_dot
    pos = 0.5 * inertia * (gains.kp * e + gains.kd * e_dot)
    force = -0.5 * gains.kf * (master.tau + slave.tau)
    return pos + force, -pos + force


def slave_autonomous_ref(
    command, slave: RobotState, gains: Gains, inertia: JointVector
) -> JointVector:
    """Slave half of the bilateral law with a command triple standing in for the master."""
    pos = 0.5 * inertia * (
        gains.kp * (command.theta - slave.theta) + gains.kd * (command.theta_dot - slave.theta_dot)
    )
    return pos - 0.5 * gains.kf * (command.tau + slave.tau)
