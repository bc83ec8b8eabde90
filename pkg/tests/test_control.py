import numpy as np
import pytest

from bilat.control import (
    Gains,
    ObserverState,
    bilateral_refs,
    dob_estimate,
    dob_peek,
    pseudo_derivative,
    rfob_torque,
    slave_autonomous_ref,
)
from bilat.dynamics import RobotParams, RobotState, gravity_torque, jv, step_joint_dynamics
from bilat.executor import CommandTriple

DT = 0.001


def default_params():
    return RobotParams.default()


class TestPseudoDerivative:
    def test_first_call_from_zero_state(self):
        vel, _ = pseudo_derivative(np.zeros(3), np.zeros(3), 200.0, DT)
        np.testing.assert_array_equal(vel, np.zeros(3))

    def test_constant_input_decays_within_tolerance(self):
        g = 200.0
        filt = np.zeros(3)
        theta = jv(1.0, -0.5, 0.2)
        steps = int(5.0 / g / DT)
        for _ in range(steps):
            vel, filt = pseudo_derivative(filt, theta, g, DT)
        assert np.all(np.abs(vel) < 0.01 * g * np.abs(theta))

    def test_ramp_converges_to_slope(self):
        g = 200.0
        slope = jv(0.7, -1.3, 0.4)
        filt = np.zeros(3)
        steps = int(5.0 / g / DT)
        for i in range(1, steps + 1):
            vel, filt = pseudo_derivative(filt, slope * (i * DT), g, DT)
        np.testing.assert_allclose(vel, slope, rtol=0.01)

    def test_superposition_is_exact(self):
        g = 150.0
        rng = np.random.default_rng(0)
        xs = rng.normal(size=(50, 3))
        f1 = np.zeros(3)
        f2 = np.zeros(3)
        for x in xs:
            v1, f1 = pseudo_derivative(f1, x, g, DT)
            v2, f2 = pseudo_derivative(f2, 2.0 * x, g, DT)
            np.testing.assert_allclose(2.0 * v1, v2, atol=1e-12)


class TestDob:
    def test_converges_to_constant_disturbance_at_rest(self):
        # tau_ref exactly cancels a constant disturbance, robot at rest
        g = 200.0
        params = default_params()
        d = jv(0.3, -0.1, 0.05)
        filt = np.zeros(3)
        steps = int(5.0 / g / DT)
        for _ in range(steps):
            est, filt = dob_estimate(filt, d, np.zeros(3), params.inertia, g, DT)
        np.testing.assert_allclose(est, d, rtol=0.01)

    def test_all_zero_stays_zero(self):
        filt = np.zeros(3)
        for _ in range(100):
            est, filt = dob_estimate(filt, np.zeros(3), np.zeros(3), default_params().inertia, 200.0, DT)
            np.testing.assert_array_equal(est, np.zeros(3))

    def test_tracks_viscous_friction_in_cruise(self):
        # constant-velocity cruise: disturbance is D*vel
        params = default_params()
        gains = Gains()
        state = RobotState(np.zeros(3), jv(1.0, 0, 0), np.zeros(3))
        obs = ObserverState.at_pose(state.theta)
        est = np.zeros(3)
        for _ in range(3000):
            vel, obs.pd_filt = pseudo_derivative(obs.pd_filt, state.theta, gains.g_pd, DT)
            # torque that holds the cruise: friction (no gravity on joint 1)
            tau_ref = params.friction * jv(1.0, 0, 0)
            est, obs.dob_filt = dob_estimate(obs.dob_filt, tau_ref, vel, params.inertia, gains.g_dob, DT)
            state = step_joint_dynamics(state, tau_ref, np.zeros(3), params, DT)
        np.testing.assert_allclose(est[0], params.friction[0] * 1.0, rtol=0.02)

    def test_peek_matches_estimate_output(self):
        rng = np.random.default_rng(1)
        filt = rng.normal(size=3)
        vel = rng.normal(size=3)
        params = default_params()
        peeked = dob_peek(filt, vel, params.inertia, 200.0)
        est, _ = dob_estimate(filt, rng.normal(size=3), vel, params.inertia, 200.0, DT)
        np.testing.assert_array_equal(peeked, est)

    def test_linearity(self):
        params = default_params()
        rng = np.random.default_rng(2)
        refs = rng.normal(size=(40, 3))
        vels = rng.normal(size=(40, 3))
        f1 = np.zeros(3)
        f2 = np.zeros(3)
        for ref, vel in zip(refs, vels):
            e1, f1 = dob_estimate(f1, ref, vel, params.inertia, 200.0, DT)
            e2, f2 = dob_estimate(f2, 2 * ref, 2 * vel, params.inertia, 200.0, DT)
            np.testing.assert_allclose(2 * e1, e2, atol=1e-12)


class TestRfob:
    def test_exact_algebraic_cancellation(self):
        params = default_params()
        theta = jv(0.2, 0.5, -1.0)
        vel = jv(0.3, -0.2, 0.1)
        dis = params.friction * vel + gravity_torque(theta, params)
        np.testing.assert_allclose(rfob_torque(dis, theta, vel, params), np.zeros(3), atol=1e-15)

    def test_free_motion_residual_small(self):
        # PD-driven swing in free air with full observer pipeline
        params = default_params()
        gains = Gains()
        target = jv(0.3, 0.6, -1.2)
        state = RobotState.at_rest(jv(0.0, 0.4, -0.9))
        obs = ObserverState.at_pose(state.theta)
        residuals = []
        for i in range(3000):
            vel, obs.pd_filt = pseudo_derivative(obs.pd_filt, state.theta, gains.g_pd, DT)
            dis = dob_peek(obs.dob_filt, vel, params.inertia, gains.g_dob)
            tau_res = rfob_torque(dis, state.theta, vel, params)
            ctrl = params.inertia * (20.0 * (target - state.theta) - 8.0 * vel)
            tau_ref = ctrl + dis
            _, obs.dob_filt = dob_estimate(obs.dob_filt, tau_ref, vel, params.inertia, gains.g_dob, DT)
            state = step_joint_dynamics(state, tau_ref, np.zeros(3), params, DT)
            if i > 500:
                residuals.append(np.abs(tau_res).max())
        assert max(residuals) < 0.02

    def test_static_contact_matches_ground_truth(self):
        # hold a pose while a constant external torque acts; estimate it
        params = default_params()
        gains = Gains()
        tau_ext = jv(0.05, -0.12, 0.04)
        theta0 = jv(0.1, 0.3, -0.8)
        state = RobotState.at_rest(theta0)
        obs = ObserverState.at_pose(state.theta)
        tau_res = np.zeros(3)
        for _ in range(4000):
            vel, obs.pd_filt = pseudo_derivative(obs.pd_filt, state.theta, gains.g_pd, DT)
            dis = dob_peek(obs.dob_filt, vel, params.inertia, gains.g_dob)
            tau_res = rfob_torque(dis, state.theta, vel, params)
            ctrl = params.inertia * (400.0 * (theta0 - state.theta) - 40.0 * vel)
            tau_ref = ctrl + dis
            _, obs.dob_filt = dob_estimate(obs.dob_filt, tau_ref, vel, params.inertia, gains.g_dob, DT)
            state = step_joint_dynamics(state, tau_ref, tau_ext, params, DT)
        np.testing.assert_allclose(tau_res, tau_ext, rtol=0.02)


class TestBilateralLaw:
    def test_zero_when_goals_met(self):
        gains = Gains()
        params = default_params()
        theta = jv(0.1, 0.2, 0.3)
        vel = jv(0.01, 0.02, 0.03)
        tau = jv(0.1, -0.2, 0.05)
        master = RobotState(theta, vel, tau)
        slave = RobotState(theta.copy(), vel.copy(), -tau)
        ref_m, ref_s = bilateral_refs(master, slave, gains, params.inertia)
        np.testing.assert_allclose(ref_m, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(ref_s, np.zeros(3), atol=1e-15)

    def test_position_error_arithmetic(self):
        gains = Gains(kp=400.0, kd=40.0, kf=1.0)
        inertia = jv(0.003, 0.003, 0.003)
        master = RobotState(np.zeros(3), np.zeros(3), np.zeros(3))
        slave = RobotState(jv(0.1, 0, 0), np.zeros(3), np.zeros(3))
        ref_m, ref_s = bilateral_refs(master, slave, gains, inertia)
        assert ref_m[0] == pytest.approx(0.06)
        assert ref_s[0] == pytest.approx(-0.06)

    def test_antisymmetric_position_terms_and_common_force_term(self):
        gains = Gains()
        inertia = default_params().inertia
        rng = np.random.default_rng(7)
        for _ in range(100):
            master = RobotState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
            slave = RobotState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
            ref_m, ref_s = bilateral_refs(master, slave, gains, inertia)
            force = -0.5 * gains.kf * (master.tau + slave.tau)
            pos_m = ref_m - force
            pos_s = ref_s - force
            np.testing.assert_allclose(pos_m, -pos_s, atol=1e-12)

    def test_autonomous_ref_equals_slave_half_with_master_as_command(self):
        gains = Gains()
        inertia = default_params().inertia
        rng = np.random.default_rng(8)
        for _ in range(50):
            master = RobotState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
            slave = RobotState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
            _, ref_s = bilateral_refs(master, slave, gains, inertia)
            command = CommandTriple(master.theta, master.theta_dot, master.tau)
            np.testing.assert_allclose(slave_autonomous_ref(command, slave, gains, inertia), ref_s, atol=1e-12)

    def test_autonomous_ref_zero_for_self_command(self):
        gains = Gains()
        inertia = default_params().inertia
        slave = RobotState(jv(0.2, -0.1, 0.4), jv(0.5, 0, -0.2), jv(0.1, 0.2, -0.3))
        command = CommandTriple(slave.theta.copy(), slave.theta_dot.copy(), -slave.tau)
        np.testing.assert_allclose(slave_autonomous_ref(command, slave, gains, inertia), np.zeros(3), atol=1e-15)

    def test_autonomous_ref_pure_position_error(self):
        gains = Gains(kp=400.0, kd=40.0, kf=1.0)
        inertia = jv(0.003, 0.003, 0.003)
        slave = RobotState.at_rest(np.zeros(3))
        command = CommandTriple(jv(0, 0.05, 0), np.zeros(3), np.zeros(3))
        ref = slave_autonomous_ref(command, slave, gains, inertia)
        expected = 0.5 * 0.003 * 400.0 * 0.05
        np.testing.assert_allclose(ref, [0, expected, 0], atol=1e-15)


class TestGainValidation:
    def test_rejects_nonpositive_gains(self):
        with pytest.raises(ValueError):
            Gains(kp=0.0)
        with pytest.raises(ValueError):
            Gains(g_dob=-1.0)
