"""Scripted expert teleoperation and 4ch bilateral data collection.

A PD "hand" replaces the human operator: it drags the master robot along
a reference that approaches the paper for 1 s, then sweeps joint 1
sinusoidally between two waypoint angles while pressing the pen onto the
paper. The slave follows through the bilateral coupling and makes the
actual contact. Each robot runs the full measurement pipeline
(pseudo-derivative, DOB, RFOB) and the disturbance estimate is added to
the coupling output, so every joint behaves as its nominal inertia and
the coupling goals hold under gravity, friction, and contact.

Trials are deterministic given their seed; a small seeded jitter on
sweep amplitude, phase, period, and press force emulates trial-to-trial
operator variation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from .control import Gains, ObserverState, bilateral_refs, dob_estimate, dob_peek, pseudo_derivative, rfob_torque
from .dynamics import (
    Environment,
    JointVector,
    RobotParams,
    RobotState,
    contact_wrench,
    jv,
    step_joint_dynamics,
)
from .errors import LengthMismatch, SimulationDiverged

CONTROL_DT = 0.001
DOWNSAMPLE_FACTOR = 20


@dataclass(frozen=True)
class TrialSpec:
    """One data-collection episode."""

    paper_height: float
    duration: float = 13.0
    arc_amplitude: float = 0.35
    arc_period: float = 2.0
    press_depth: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")


@dataclass(frozen=True)
class ExpertConfig:
    """Scripted-operator parameters (the 'hand').

    The hand is height-blind until touch: it descends from a fixed hover
    at ``descent_speed`` and lets contact stop the pen, pressing with a
    feedforward force. Joint 1 and the arc radius are position-controlled;
    the vertical channel is a soft spring plus damping so the press force
    is set by ``press_force`` rather than by the paper height.
    """

    draw_radius: float = 0.18
    home_z: float = 0.09
    hover_z: float = 0.08
    descent_speed: float = 0.08
    approach_s: float = 1.0
    blend_s: float = 0.5
    press_force: float = 1.5
    hand_kp: float = 25.0
    hand_kd: float = 0.3
    radial_kp: float = 300.0
    radial_kd: float = 10.0
    vertical_kp: float = 8.0
    vertical_kd: float = 15.0
    jitter_amplitude: float = 0.02
    jitter_phase: float = 0.1
    jitter_period: float = 0.05
    jitter_press: float = 0.1
    jitter_descent: float = 0.3
    jitter_approach: float = 0.3
    jitter_hover: float = 0.003
    jitter_radius: float = 0.008
    safety_omega: float = 50.0


@dataclass
class Trajectory:
    """1 ms recording of one episode.

    Master/slave angle, velocity, and torque arrays hold the *measured*
    signals (encoder angle, pseudo-derivative velocity, RFOB torque) --
    the same quantities a physical system would log. Ground-truth contact
    data are kept separately for test oracles.
    """

    dt: float
    master_theta: np.ndarray | None
    master_theta_dot: np.ndarray | None
    master_tau: np.ndarray | None
    slave_theta: np.ndarray
    slave_theta_dot: np.ndarray
    slave_tau: np.ndarray
    tau_ref_master: np.ndarray | None
    tau_ref_slave: np.ndarray | None
    contact_force: np.ndarray | None
    slave_tau_ext: np.ndarray | None
    command: np.ndarray | None = None

    def __len__(self) -> int:
        return self.slave_theta.shape[0]

    def state_row(self, role: str, i: int) -> np.ndarray:
        """9-dim state vector (theta x3, theta_dot x3, tau x3) at step i."""
        if role == "master":
            return np.concatenate([self.master_theta[i], self.master_theta_dot[i], self.master_tau[i]])
        return np.concatenate([self.slave_theta[i], self.slave_theta_dot[i], self.slave_tau[i]])


def ik_planar(r: float, z_rel: float, l2: float, l3: float) -> tuple[float, float]:
    """Elbow-up inverse kinematics for the joint 2-3 pair.

    Solves l2*cos(t2) + l3*cos(t2+t3) = r and l2*sin(t2) + l3*sin(t2+t3) = z_rel.
    """
    d = (r * r + z_rel * z_rel - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
    d = min(1.0, max(-1.0, d))
    t3 = -math.acos(d)
    t2 = math.atan2(z_rel, r) - math.atan2(l3 * math.sin(t3), l2 + l3 * math.cos(t3))
    return t2, t3


class ExpertPolicy:
    """Deterministic reference trajectory and hand torque for one trial.

    Phases: 1 s approach from home to a fixed hover pose, then the draw
    phase, where joint 1 sweeps sinusoidally while the vertical reference
    ramps down at the descent speed until ``press_depth`` below the paper.
    The vertical hand channel is soft, so the press force comes from the
    feedforward bias instead of the reference depth.
    """

    def __init__(self, spec: TrialSpec, expert: ExpertConfig, params: RobotParams, env: Environment):
        # timing jitters decorrelate contact time from paper height across
        # trials, so touch itself is the only reliable cue in the data
        rng = np.random.default_rng(spec.seed)
        u = rng.uniform(-1.0, 1.0, 8)
        self.amp = spec.arc_amplitude * (1.0 + expert.jitter_amplitude * u[0])
        self.phase = expert.jitter_phase * u[1]
        self.period = spec.arc_period * (1.0 + expert.jitter_period * u[2])
        self.press_force = expert.press_force * (1.0 + expert.jitter_press * u[3])
        self.descent_speed = expert.descent_speed * (1.0 + expert.jitter_descent * u[4])
        self.approach_s = expert.approach_s * (1.0 + expert.jitter_approach * u[5])
        self.hover_z = expert.hover_z + expert.jitter_hover * u[6]
        self.draw_radius = expert.draw_radius + expert.jitter_radius * u[7]
        self.spec = spec
        self.expert = expert
        self.params = params
        self.env = env
        self.l3_eff = params.l3 + env.pen_length
        self.floor_z = env.paper_height - spec.press_depth
        self.home = self._pose(0.0, expert.home_z)
        self._hover_pose = self._pose(self.amp * math.sin(self.phase), self.hover_z)

    def _pose(self, theta1: float, tip_z: float) -> JointVector:
        t2, t3 = ik_planar(self.draw_radius, tip_z - self.params.base_height, self.params.l2, self.l3_eff)
        return jv(theta1, t2, t3)

    def sweep(self, t: float) -> float:
        td = max(t - self.approach_s, 0.0)
        return self.amp * math.sin(2.0 * math.pi * td / self.period + self.phase)

    def z_ref(self, t: float) -> float:
        if t <= self.approach_s:
            return self.hover_z
        return max(self.floor_z, self.hover_z - self.descent_speed * (t - self.approach_s))

    def reference(self, t: float) -> JointVector:
        if t <= self.approach_s:
            s = 0.5 * (1.0 - math.cos(math.pi * max(t, 0.0) / self.approach_s))
            return self.home + s * (self._hover_pose - self.home)
        return self._pose(self.sweep(t), self.z_ref(t))

    def press_blend(self, t: float) -> float:
        if t <= self.approach_s:
            return 0.0
        return min(1.0, (t - self.approach_s) / self.expert.blend_s)

    def hand_torque(self, t: float, theta: JointVector, theta_dot: JointVector) -> JointVector:
        """Hand torque on the master at time t given its measured state."""
        ex = self.expert
        ref = self.reference(t)
        joint_pd = ex.hand_kp * (ref - theta) - ex.hand_kd * theta_dot
        blend = self.press_blend(t)
        if blend == 0.0:
            return joint_pd

        # hybrid law: stiff joint-1 sweep + stiff radius, soft vertical + press bias
        l2, l3 = self.params.l2, self.l3_eff
        c2, s2 = math.cos(theta[1]), math.sin(theta[1])
        c23, s23 = math.cos(theta[1] + theta[2]), math.sin(theta[1] + theta[2])
        r = l2 * c2 + l3 * c23
        z = self.params.base_height + l2 * s2 + l3 * s23
        dr = np.array([0.0, -l2 * s2 - l3 * s23, -l3 * s23])
        dz = np.array([0.0, l2 * c2 + l3 * c23, l3 * c23])
        r_dot = float(dr @ theta_dot)
        z_dot = float(dz @ theta_dot)
        f_r = ex.radial_kp * (self.draw_radius - r) - ex.radial_kd * r_dot
        f_z = ex.vertical_kp * (self.z_ref(t) - z) - ex.vertical_kd * z_dot - blend * self.press_force
        hybrid = dr * f_r + dz * f_z
        hybrid[0] = ex.hand_kp * (self.sweep(t) - theta[0]) - ex.hand_kd * theta_dot[0]
        return (1.0 - blend) * joint_pd + blend * hybrid


def expert_action(
    t: float,
    spec: TrialSpec,
    master: RobotState,
    expert: ExpertConfig,
    params: RobotParams,
    env: Environment,
) -> JointVector:
    """Hand torque applied to the master at time t (stateless convenience wrapper)."""
    return ExpertPolicy(spec, expert, params, env).hand_torque(t, master.theta, master.theta_dot)


def collect_trial(
    spec: TrialSpec,
    params: RobotParams,
    gains: Gains,
    expert: ExpertConfig,
    env: Environment,
) -> Trajectory:
    """Run one 1 ms bilateral teleoperation episode and record it."""
    env = env.with_height(spec.paper_height)
    policy = ExpertPolicy(spec, expert, params, env)
    n = int(round(spec.duration / CONTROL_DT))
    dt = CONTROL_DT
    inertia = params.inertia

    master = RobotState.at_rest(policy.home)
    slave = RobotState.at_rest(policy.home)
    obs_m = ObserverState.at_pose(master.theta)
    obs_s = ObserverState.at_pose(slave.theta)

    m_theta = np.empty((n, 3))
    m_vel = np.empty((n, 3))
    m_tau = np.empty((n, 3))
    s_theta = np.empty((n, 3))
    s_vel = np.empty((n, 3))
    s_tau = np.empty((n, 3))
    ref_m = np.empty((n, 3))
    ref_s = np.empty((n, 3))
    f_n = np.empty(n)
    s_ext = np.empty((n, 3))

    for i in range(n):
        t = i * dt
        vel_m, obs_m.pd_filt = pseudo_derivative(obs_m.pd_filt, master.theta, gains.g_pd, dt)
        vel_s, obs_s.pd_filt = pseudo_derivative(obs_s.pd_filt, slave.theta, gains.g_pd, dt)
        dis_m = dob_peek(obs_m.dob_filt, vel_m, inertia, gains.g_dob)
        dis_s = dob_peek(obs_s.dob_filt, vel_s, inertia, gains.g_dob)
        tau_m = rfob_torque(dis_m, master.theta, vel_m, params)
        tau_s = rfob_torque(dis_s, slave.theta, vel_s, params)

        meas_m = RobotState(master.theta, vel_m, tau_m)
        meas_s = RobotState(slave.theta, vel_s, tau_s)
        ctrl_m, ctrl_s = bilateral_refs(meas_m, meas_s, gains, inertia)
        tau_ref_m = ctrl_m + dis_m
        tau_ref_s = ctrl_s + dis_s
        _, obs_m.dob_filt = dob_estimate(obs_m.dob_filt, tau_ref_m, vel_m, inertia, gains.g_dob, dt)
        _, obs_s.dob_filt = dob_estimate(obs_s.dob_filt, tau_ref_s, vel_s, inertia, gains.g_dob, dt)

        tau_hand = policy.hand_torque(t, master.theta, vel_m)
        tau_contact, force = contact_wrench(slave.theta, slave.theta_dot, params, env)

        m_theta[i] = master.theta
        m_vel[i] = vel_m
        m_tau[i] = tau_m
        s_theta[i] = slave.theta
        s_vel[i] = vel_s
        s_tau[i] = tau_s
        ref_m[i] = tau_ref_m
        ref_s[i] = tau_ref_s
        f_n[i] = force
        s_ext[i] = -tau_contact

        master = step_joint_dynamics(master, tau_ref_m, -tau_hand, params, dt)
        slave = step_joint_dynamics(slave, tau_ref_s, -tau_contact, params, dt)
        if (
            np.max(np.abs(master.theta_dot)) > expert.safety_omega
            or np.max(np.abs(slave.theta_dot)) > expert.safety_omega
        ):
            raise SimulationDiverged(f"velocity bound exceeded at t={t:.3f} s")

    return Trajectory(
        dt=dt,
        master_theta=m_theta,
        master_theta_dot=m_vel,
        master_tau=m_tau,
        slave_theta=s_theta,
        slave_theta_dot=s_vel,
        slave_tau=s_tau,
        tau_ref_master=ref_m,
        tau_ref_slave=ref_s,
        contact_force=f_n,
        slave_tau_ext=s_ext,
    )


def downsample(traj: Trajectory, factor: int = DOWNSAMPLE_FACTOR) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decimate the 1 ms recording to the training rate (no anti-alias filter).

    Returns (t_ms, S, M): times plus slave and master 9-dim state rows.
    """
    n = len(traj)
    if n % factor != 0:
        raise LengthMismatch(f"trajectory length {n} not divisible by factor {factor}")
    idx = np.arange(0, n, factor)
    s_rows = np.hstack([traj.slave_theta[idx], traj.slave_theta_dot[idx], traj.slave_tau[idx]])
    m_rows = np.hstack([traj.master_theta[idx], traj.master_theta_dot[idx], traj.master_tau[idx]])
    t_ms = idx * traj.dt * 1000.0
    return t_ms, s_rows, m_rows


def coupling_residuals(traj: Trajectory, settle_s: float = 0.5, contact_eps: float = 1e-6) -> dict:
    """Closed-loop goal residuals for one trial, evaluated after settling.

    Reports the fraction of steps meeting |theta_m - theta_s| < 0.01 rad
    per joint and, over contact steps, |tau_m + tau_s| < 0.05 N.m.
    """
    start = int(round(settle_s / traj.dt))
    e = np.abs(traj.master_theta[start:] - traj.slave_theta[start:])
    pos_ok = float(np.mean(np.all(e < 0.01, axis=1)))
    contact = traj.contact_force[start:] > contact_eps
    if np.any(contact):
        tsum = np.abs(traj.master_tau[start:][contact] + traj.slave_tau[start:][contact])
        force_ok = float(np.mean(np.all(tsum < 0.05, axis=1)))
    else:
        force_ok = 1.0
    return {
        "pos_goal_fraction": pos_ok,
        "force_goal_fraction": force_ok,
        "max_pos_err": float(e.max()),
        "contact_steps": int(np.count_nonzero(contact)),
    }
