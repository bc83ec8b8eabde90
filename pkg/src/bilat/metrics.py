"""Evaluation: prediction variances, conventional/feedback variance
ratios, cycle-amplitude reproducibility, and the task success criterion.

Variances are mean squared prediction-response deviations about zero
(not about the error mean). Ratios divide conventional-mode by
feedback-mode variances per joint, then average over the three joints
per quantity; a total above 1.0 indicates the command feedback reduced
the estimate-response mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Environment, RobotParams, pen_tip, tip_jacobian
from .errors import DegenerateDenominator, MissingPredictions, TooShort
from .expert import ik_planar


@dataclass(frozen=True)
class VarianceReport:
    """Per-joint mean squared (response - estimate) for angle, velocity, torque."""

    v_theta: np.ndarray
    v_dtheta: np.ndarray
    v_tau: np.ndarray
    steps: int

    def quantity(self, name: str) -> np.ndarray:
        return {"theta": self.v_theta, "dtheta": self.v_dtheta, "tau": self.v_tau}[name]


@dataclass(frozen=True)
class RatioReport:
    v_theta_ratio: float
    v_dtheta_ratio: float
    v_tau_ratio: float
    v_total_ratio: float


@dataclass(frozen=True)
class SuccessCriterion:
    """Concrete success test for one drawing episode.

    The contact-force band and duty, waypoint tolerance, and velocity
    bound define success; the arc geometry fields locate the waypoints.
    """

    force_band: tuple[float, float] = (0.5, 3.0)
    duty_min: float = 0.9
    waypoint_tol: float = 0.005
    omega_max: float = 10.0
    window_start_s: float = 2.0
    waypoint_theta1: float = 0.35
    draw_radius: float = 0.18
    period_s: float = 2.0

    def __post_init__(self):
        if not (self.force_band[0] < self.force_band[1]):
            raise ValueError("force band must satisfy low < high")
        if not (0.0 < self.duty_min <= 1.0):
            raise ValueError("duty_min must be in (0, 1]")


@dataclass(frozen=True)
class SuccessResult:
    ok: bool
    reason: str
    contact_duty: float
    waypoint_hits: int
    waypoint_periods: int


def prediction_variance(log) -> VarianceReport:
    """Mean squared deviation between measured and predicted slave states.

    Rows without predictions (the first tick) are excluded; T is the
    number of scored rows.
    """
    if not getattr(log, "has_predictions", False):
        raise MissingPredictions(f"scheme {log.scheme} logs no slave estimates")
    valid = ~np.any(np.isnan(log.s_hat), axis=1)
    if not np.any(valid):
        raise MissingPredictions("log contains no prediction rows")
    err = log.s_res[valid] - log.s_hat[valid]
    sq = np.mean(err * err, axis=0)
    return VarianceReport(v_theta=sq[0:3], v_dtheta=sq[3:6], v_tau=sq[6:9], steps=int(valid.sum()))


def per_joint_ratios(conv: VarianceReport, fb: VarianceReport) -> dict[str, np.ndarray]:
    """Raw per-joint conventional/feedback ratios for each quantity."""
    out = {}
    bad = []
    for name in ("theta", "dtheta", "tau"):
        denom = fb.quantity(name)
        zero = denom == 0.0
        if np.any(zero):
            bad += [f"{name}{j + 1}" for j in np.flatnonzero(zero)]
        out[name] = conv.quantity(name) / np.where(zero, np.nan, denom)
    if bad:
        raise DegenerateDenominator(f"zero feedback variance on joints: {', '.join(bad)}")
    return out


def variance_ratios(
    conv: VarianceReport, fb: VarianceReport, weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
) -> RatioReport:
    """Per-quantity mean of per-joint ratios; total is their weighted sum."""
    ratios = per_joint_ratios(conv, fb)
    r_theta = float(np.mean(ratios["theta"]))
    r_dtheta = float(np.mean(ratios["dtheta"]))
    r_tau = float(np.mean(ratios["tau"]))
    total = weights[0] * r_theta + weights[1] * r_dtheta + weights[2] * r_tau
    return RatioReport(r_theta, r_dtheta, r_tau, float(total))


def amplitude_stats(
    t_s: np.ndarray,
    signal: np.ndarray,
    period_s: float,
    window: tuple[float, float],
) -> tuple[float, float]:
    """(amplitude, mean) of a periodic signal over the drawing window.

    Mean is the time average; amplitude is half the peak-to-peak of the
    cycle-wise extrema, using the median across cycles to resist
    single-sample spikes. Requires at least two full cycles.
    """
    t_s = np.asarray(t_s, dtype=float)
    signal = np.asarray(signal, dtype=float)
    mask = (t_s >= window[0]) & (t_s <= window[1])
    t_w = t_s[mask]
    x = signal[mask]
    if t_w.size < 2 or (t_w[-1] - t_w[0]) < 2.0 * period_s:
        raise TooShort("signal spans fewer than two cycles")
    n_cycles = int((t_w[-1] - t_w[0]) // period_s)
    highs, lows = [], []
    for c in range(n_cycles):
        lo, hi = t_w[0] + c * period_s, t_w[0] + (c + 1) * period_s
        seg = x[(t_w >= lo) & (t_w < hi)]
        highs.append(seg.max())
        lows.append(seg.min())
    amplitude = 0.5 * (float(np.median(highs)) - float(np.median(lows)))
    return amplitude, float(np.mean(x))


def reproducibility_gap(train_stats: tuple[float, float], auto_stats: tuple[float, float]) -> tuple[float, float]:
    """Absolute (amplitude, mean) differences between training and autonomous data."""
    return abs(train_stats[0] - auto_stats[0]), abs(train_stats[1] - auto_stats[1])


def estimate_press_force(traj, params: RobotParams, env: Environment) -> np.ndarray:
    """Normal press force inferred from the logged joint torques.

    The torque estimate is -J^T f for the contact force f on the tip;
    solving per sample and taking the vertical component recovers the
    press the same way a physical system would, without ground truth.
    """
    n = len(traj)
    force = np.empty(n)
    for i in range(n):
        jac = tip_jacobian(traj.slave_theta[i], params, extra_l3=env.pen_length)
        f_vec, *_ = np.linalg.lstsq(jac.T, -traj.slave_tau[i], rcond=None)
        force[i] = f_vec[2]
    return force


def success_check(log, env: Environment, criterion: SuccessCriterion, params: RobotParams) -> SuccessResult:
    """Success iff contact force stays in band, both waypoints are visited
    each period, no velocity-bound violation, and no divergence."""
    if log.diverged:
        return SuccessResult(False, f"diverged: {log.reason}", 0.0, 0, 0)
    traj = log.trajectory
    t = np.arange(len(traj)) * traj.dt
    window = t >= criterion.window_start_s

    speed = np.max(np.abs(traj.slave_theta_dot), axis=1)
    over = np.flatnonzero(speed > criterion.omega_max)
    if over.size:
        return SuccessResult(False, f"velocity bound exceeded at t={t[over[0]]:.3f} s", 0.0, 0, 0)

    force = estimate_press_force(traj, params, env)
    in_band = (force[window] >= criterion.force_band[0]) & (force[window] <= criterion.force_band[1])
    duty = float(np.mean(in_band)) if in_band.size else 0.0
    if duty < criterion.duty_min:
        median_f = float(np.median(np.abs(force[window]))) if in_band.size else 0.0
        reason = "no contact" if median_f < 0.5 * criterion.force_band[0] else (
            f"contact force in band only {duty:.0%} of the drawing window"
        )
        return SuccessResult(False, reason, duty, 0, 0)

    t2, t3 = ik_planar(criterion.draw_radius, env.paper_height - params.base_height, params.l2, params.l3 + env.pen_length)
    theta_a = np.array([criterion.waypoint_theta1, t2, t3])
    theta_b = np.array([-criterion.waypoint_theta1, t2, t3])
    point_a = pen_tip(theta_a, params, env)
    point_b = pen_tip(theta_b, params, env)

    t_w = t[window]
    tips = np.array([pen_tip(th, params, env) for th in traj.slave_theta[window]])
    n_periods = int((t_w[-1] - t_w[0]) // criterion.period_s)
    if n_periods < 1:
        return SuccessResult(False, "episode too short for waypoint check", duty, 0, 0)
    hits = 0
    for c in range(n_periods):
        lo, hi = t_w[0] + c * criterion.period_s, t_w[0] + (c + 1) * criterion.period_s
        seg = tips[(t_w >= lo) & (t_w < hi)]
        da = np.min(np.linalg.norm(seg - point_a, axis=1))
        db = np.min(np.linalg.norm(seg - point_b, axis=1))
        if da <= criterion.waypoint_tol and db <= criterion.waypoint_tol:
            hits += 1
    if hits < n_periods:
        return SuccessResult(
            False, f"waypoints visited in only {hits}/{n_periods} periods", duty, hits, n_periods
        )
    return SuccessResult(True, "", duty, hits, n_periods)
