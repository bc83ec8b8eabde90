"""Autonomous task execution.

Every 20 ms the slave's measured state feeds the trained model; the
resulting master estimate becomes the slave command, either directly
(conventional law) or corrected by the slave estimation error with a
sign flip on the torque channel and a low-pass filter (feedback law).
Between inference ticks the command is zero-order held while the 1 ms
controller and simulation run.

Predictions are used one tick late: the estimate produced at tick i is
the prediction *for* tick i+1, so commands at tick i compare that
prediction with the state measured at tick i. The first tick holds the
initial pose because no prediction exists yet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import Gains, ObserverState, dob_estimate, dob_peek, pseudo_derivative, rfob_torque, slave_autonomous_ref
from .dynamics import Environment, JointVector, RobotParams, RobotState, contact_wrench, step_joint_dynamics
from .errors import MissingSlaveEstimate, SchemeMismatch, SimulationDiverged
from .expert import CONTROL_DT, DOWNSAMPLE_FACTOR, Trajectory
from .training import denormalize, normalize

# position and velocity errors feed back positively, torque negatively
FEEDBACK_SIGNS = np.array([1.0] * 6 + [-1.0] * 3)


@dataclass
class CommandTriple:
    theta: JointVector
    theta_dot: JointVector
    tau: JointVector

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.theta_dot, self.tau])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "CommandTriple":
        v = np.asarray(v, dtype=float)
        return cls(v[0:3].copy(), v[3:6].copy(), v[6:9].copy())


@dataclass
class LpfState:
    """First-order smoother y = K*y_prev + (1-K)*x per command channel.

    ``y_prev`` of None warm-starts the filter at the first input, which
    suppresses the startup transient.
    """

    k_coef: float = 0.5
    y_prev: float | np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 <= self.k_coef < 1.0):
            raise ValueError("LPF coefficient must be in [0, 1)")


def lpf_step(state: LpfState, x):
    y_prev = x if state.y_prev is None else state.y_prev
    y = state.k_coef * y_prev + (1.0 - state.k_coef) * x
    return y, LpfState(state.k_coef, y)


@dataclass
class InferenceState:
    """Model hidden state plus, for SM2SM, the fed-back virtual master."""

    hidden: list | None = None
    virtual_master: np.ndarray | None = None


def infer_step(model, s_res: np.ndarray, state: InferenceState):
    """One 20 ms prediction step.

    ``s_res`` is the raw measured slave state; normalization happens here
    with the model's stored statistics. Returns (m_hat, s_hat, next_state)
    in raw units; s_hat is None for S2M. SM2SM seeds its virtual master
    with the dataset's mean initial master state on the first call.
    """
    s_res = np.asarray(s_res, dtype=float)
    x = normalize(s_res, model.s_mean, model.s_std)
    if model.scheme == "SM2SM":
        vm = model.m0_mean if state.virtual_master is None else state.virtual_master
        x = np.concatenate([x, normalize(vm, model.m_mean, model.m_std)])
    elif model.scheme not in ("S2M", "S2SM"):
        raise SchemeMismatch(f"unknown scheme {model.scheme!r}")
    y, hidden = model.step_norm(x, state.hidden)
    if model.scheme == "S2M":
        m_hat = denormalize(y, model.m_mean, model.m_std)
        s_hat = None
    else:
        s_hat = denormalize(y[:9], model.s_mean, model.s_std)
        m_hat = denormalize(y[9:], model.m_mean, model.m_std)
    next_state = InferenceState(
        hidden=hidden,
        virtual_master=m_hat if model.scheme == "SM2SM" else None,
    )
    return m_hat, s_hat, next_state


def conventional_command(m_hat: np.ndarray) -> CommandTriple:
    """The master estimate itself is the slave command."""
    return CommandTriple.from_vector(m_hat)


def feedback_command(
    m_hat: np.ndarray, s_hat: np.ndarray | None, s_res: np.ndarray, lpf: LpfState
) -> tuple[CommandTriple, LpfState]:
    """Master estimate corrected by the slave estimation error, then filtered."""
    if s_hat is None:
        raise MissingSlaveEstimate("feedback command needs a slave estimate (S2SM or SM2SM)")
    raw = np.asarray(m_hat, dtype=float) + FEEDBACK_SIGNS * (np.asarray(s_hat, dtype=float) - np.asarray(s_res, dtype=float))
    filtered, lpf = lpf_step(lpf, raw)
    return CommandTriple.from_vector(filtered), lpf


@dataclass
class AutonomousLog:
    """20 ms inference-tick log plus the 1 ms slave trajectory."""

    scheme: str
    autoregression_k: int
    mode: str
    height_mm: float
    t_ms: np.ndarray
    s_res: np.ndarray
    s_hat: np.ndarray
    m_hat: np.ndarray
    cmd: np.ndarray
    trajectory: Trajectory | None = None
    diverged: bool = False
    reason: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def has_predictions(self) -> bool:
        return self.scheme != "S2M"


def run_autonomous(
    model,
    mode: str,
    env: Environment,
    params: RobotParams,
    gains: Gains,
    home_theta: JointVector,
    duration: float = 13.0,
    lpf_k: float = 0.5,
    perturb: tuple[float, float] | None = None,
    safety_omega: float = 50.0,
) -> AutonomousLog:
    """Execute one autonomous episode.

    ``perturb`` of (t_s, delta_m) shifts the paper height by delta_m
    meters from time t_s onward. Raises SimulationDiverged (with the
    truncated log attached as ``.log``) if the slave leaves the safety
    bounds.
    """
    if mode not in ("conv", "fb"):
        raise ValueError(f"mode must be 'conv' or 'fb', got {mode!r}")
    if mode == "fb" and model.scheme == "S2M":
        raise SchemeMismatch("S2M produces no slave estimate: feedback mode unavailable")

    dt = CONTROL_DT
    factor = DOWNSAMPLE_FACTOR
    n = int(round(duration / dt))
    nt = (n + factor - 1) // factor
    inertia = params.inertia
    env_late = env.with_height(env.paper_height + perturb[1]) if perturb else env

    slave = RobotState.at_rest(home_theta)
    obs = ObserverState.at_pose(slave.theta)
    inf_state = InferenceState()
    lpf = LpfState(lpf_k)
    cmd = CommandTriple(np.asarray(home_theta, dtype=float).copy(), np.zeros(3), np.zeros(3))
    m_cur: np.ndarray | None = None
    s_cur: np.ndarray | None = None

    log_t = np.zeros(nt)
    log_sres = np.full((nt, 9), np.nan)
    log_shat = np.full((nt, 9), np.nan)
    log_mhat = np.full((nt, 9), np.nan)
    log_cmd = np.full((nt, 9), np.nan)
    tr_theta = np.zeros((n, 3))
    tr_vel = np.zeros((n, 3))
    tr_tau = np.zeros((n, 3))
    tr_ref = np.zeros((n, 3))
    tr_f = np.zeros(n)
    tr_ext = np.zeros((n, 3))
    tr_cmd = np.zeros((n, 9))

    def build_log(steps: int, ticks: int, diverged: bool, reason: str) -> AutonomousLog:
        traj = Trajectory(
            dt=dt,
            master_theta=None,
            master_theta_dot=None,
            master_tau=None,
            slave_theta=tr_theta[:steps],
            slave_theta_dot=tr_vel[:steps],
            slave_tau=tr_tau[:steps],
            tau_ref_master=None,
            tau_ref_slave=tr_ref[:steps],
            contact_force=tr_f[:steps],
            slave_tau_ext=tr_ext[:steps],
            command=tr_cmd[:steps],
        )
        return AutonomousLog(
            scheme=model.scheme,
            autoregression_k=model.autoregression_k,
            mode=mode,
            height_mm=env.paper_height * 1000.0,
            t_ms=log_t[:ticks],
            s_res=log_sres[:ticks],
            s_hat=log_shat[:ticks],
            m_hat=log_mhat[:ticks],
            cmd=log_cmd[:ticks],
            trajectory=traj,
            diverged=diverged,
            reason=reason,
        )

    ticks_done = 0
    for i in range(n):
        t = i * dt
        env_now = env_late if (perturb and t >= perturb[0]) else env
        vel, obs.pd_filt = pseudo_derivative(obs.pd_filt, slave.theta, gains.g_pd, dt)
        dis = dob_peek(obs.dob_filt, vel, inertia, gains.g_dob)
        tau_meas = rfob_torque(dis, slave.theta, vel, params)
        meas = RobotState(slave.theta, vel, tau_meas)

        if i % factor == 0:
            tick = i // factor
            s_res = np.concatenate([meas.theta, meas.theta_dot, meas.tau])
            if m_cur is not None:
                if mode == "conv":
                    cmd = conventional_command(m_cur)
                else:
                    cmd, lpf = feedback_command(m_cur, s_cur, s_res, lpf)
            log_t[tick] = t * 1000.0
            log_sres[tick] = s_res
            if m_cur is not None:
                log_mhat[tick] = m_cur
                if s_cur is not None:
                    log_shat[tick] = s_cur
            log_cmd[tick] = cmd.as_vector()
            m_cur, s_cur, inf_state = infer_step(model, s_res, inf_state)
            ticks_done = tick + 1

        ctrl = slave_autonomous_ref(cmd, meas, gains, inertia)
        tau_ref = ctrl + dis
        _, obs.dob_filt = dob_estimate(obs.dob_filt, tau_ref, vel, inertia, gains.g_dob, dt)
        tau_contact, force = contact_wrench(slave.theta, slave.theta_dot, params, env_now)
        tr_theta[i] = slave.theta
        tr_vel[i] = vel
        tr_tau[i] = tau_meas
        tr_ref[i] = tau_ref
        tr_f[i] = force
        tr_ext[i] = -tau_contact
        tr_cmd[i] = cmd.as_vector()
        slave = step_joint_dynamics(slave, tau_ref, -tau_contact, params, dt)
        if np.max(np.abs(slave.theta_dot)) > safety_omega or not np.all(np.isfinite(slave.theta)):
            err = SimulationDiverged(f"slave exceeded safety bounds at t={t:.3f} s")
            err.log = build_log(i + 1, ticks_done, True, str(err))
            raise err

    return build_log(n, ticks_done, False, "")


LOG_HEADER = (
    ("t_ms",)
    + tuple(f"s_{c}" for c in ("theta1", "theta2", "theta3", "dtheta1", "dtheta2", "dtheta3", "tau1", "tau2", "tau3"))
    + tuple(f"shat_{c}" for c in ("theta1", "theta2", "theta3", "dtheta1", "dtheta2", "dtheta3", "tau1", "tau2", "tau3"))
    + tuple(f"mhat_{c}" for c in ("theta1", "theta2", "theta3", "dtheta1", "dtheta2", "dtheta3", "tau1", "tau2", "tau3"))
    + tuple(f"cmd_{c}" for c in ("theta1", "theta2", "theta3", "dtheta1", "dtheta2", "dtheta3", "tau1", "tau2", "tau3"))
    + ("mode", "scheme", "k", "height_mm")
)


def save_log(log: AutonomousLog, log_path, traj_path) -> None:
    """Persist the 20 ms tick log and the 1 ms slave trajectory."""
    import csv

    from .dataset import DATASET_HEADER, _meta_line

    meta = dict(log.meta)
    meta.update({"diverged": int(log.diverged), "reason": log.reason})
    with open(log_path, "w", newline="") as fh:
        fh.write(_meta_line(meta) + "\n")
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for i in range(log.t_ms.shape[0]):
            row = [repr(float(log.t_ms[i]))]
            for block in (log.s_res, log.s_hat, log.m_hat, log.cmd):
                row += [repr(float(v)) for v in block[i]]
            row += [log.mode, log.scheme, log.autoregression_k, repr(float(log.height_mm))]
            w.writerow(row)
    traj = log.trajectory
    with open(traj_path, "w", newline="") as fh:
        fh.write(_meta_line(meta) + "\n")
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for i in range(len(traj)):
            w.writerow(
                [0, repr(float(log.height_mm)), repr(float(i * traj.dt * 1000.0)), "slave"]
                + [repr(float(v)) for v in traj.slave_theta[i]]
                + [repr(float(v)) for v in traj.slave_theta_dot[i]]
                + [repr(float(v)) for v in traj.slave_tau[i]]
            )


def load_log(log_path, traj_path=None) -> AutonomousLog:
    from .dataset import DATASET_HEADER, _read_rows

    meta, rows = _read_rows(log_path, LOG_HEADER)
    nt = len(rows)
    t_ms = np.empty(nt)
    blocks = [np.empty((nt, 9)) for _ in range(4)]
    mode = scheme = ""
    k = 0
    height_mm = 0.0
    for i, row in enumerate(rows):
        t_ms[i] = float(row[0])
        for b in range(4):
            blocks[b][i] = [float(v) for v in row[1 + 9 * b : 10 + 9 * b]]
        mode, scheme, k, height_mm = row[37], row[38], int(row[39]), float(row[40])
    trajectory = None
    if traj_path is not None:
        _, trows = _read_rows(traj_path, DATASET_HEADER)
        n = len(trows)
        theta = np.empty((n, 3))
        vel = np.empty((n, 3))
        tau = np.empty((n, 3))
        dt = CONTROL_DT
        if n >= 2:
            dt = (float(trows[1][2]) - float(trows[0][2])) / 1000.0
        for i, row in enumerate(trows):
            vals = [float(v) for v in row[4:]]
            theta[i] = vals[0:3]
            vel[i] = vals[3:6]
            tau[i] = vals[6:9]
        trajectory = Trajectory(
            dt=dt,
            master_theta=None,
            master_theta_dot=None,
            master_tau=None,
            slave_theta=theta,
            slave_theta_dot=vel,
            slave_tau=tau,
            tau_ref_master=None,
            tau_ref_slave=None,
            contact_force=None,
            slave_tau_ext=None,
        )
    return AutonomousLog(
        scheme=scheme,
        autoregression_k=k,
        mode=mode,
        height_mm=height_mm,
        t_ms=t_ms,
        s_res=blocks[0],
        s_hat=blocks[1],
        m_hat=blocks[2],
        cmd=blocks[3],
        trajectory=trajectory,
        diverged=bool(int(meta.get("diverged", 0))),
        reason=str(meta.get("reason", "")),
        meta=meta,
    )
