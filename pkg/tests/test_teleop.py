import numpy as np
import pytest

from bilat.config import load_config
from bilat.dataset import (
    Dataset,
    DatasetTrial,
    build_dataset,
    load_dataset,
    save_dataset,
    stats_path,
)
from bilat.dynamics import forward_kinematics, jv
from bilat.errors import EmptyDataset, LengthMismatch, SchemaError, SimulationDiverged
from bilat.expert import (
    ExpertPolicy,
    TrialSpec,
    collect_trial,
    coupling_residuals,
    downsample,
    expert_action,
    ik_planar,
)


@pytest.fixture(scope="module")
def ctx():
    cfg = load_config()
    return {
        "cfg": cfg,
        "params": cfg.robot_params(),
        "gains": cfg.gains(),
        "expert": cfg.expert_config(),
        "env": cfg.environment(45.0),
    }


@pytest.fixture(scope="module")
def short_trial(ctx):
    spec = TrialSpec(paper_height=0.045, duration=5.0, seed=31)
    traj = collect_trial(spec, ctx["params"], ctx["gains"], ctx["expert"], ctx["env"])
    return spec, traj


class TestIk:
    def test_round_trips_through_forward_kinematics(self, ctx):
        params = ctx["params"]
        for r, z in ((0.18, -0.03), (0.20, -0.06), (0.15, 0.0)):
            t2, t3 = ik_planar(r, z, params.l2, params.l3)
            tip = forward_kinematics(jv(0.0, t2, t3), params)
            assert tip[0] == pytest.approx(r, abs=1e-12)
            assert tip[2] - params.base_height == pytest.approx(z, abs=1e-12)

    def test_elbow_up_branch(self, ctx):
        params = ctx["params"]
        t2, t3 = ik_planar(0.18, -0.05, params.l2, params.l3)
        assert t3 < 0.0
        assert t2 > 0.0


class TestExpertPolicy:
    def test_approach_targets_hover_without_sweep(self, ctx):
        spec = TrialSpec(paper_height=0.045, seed=2)
        policy = ExpertPolicy(spec, ctx["expert"], ctx["params"], ctx["env"])
        master_state = type("S", (), {"theta": policy.home.copy(), "theta_dot": np.zeros(3)})
        tau = expert_action(0.2, spec, master_state, ctx["expert"], ctx["params"], ctx["env"])
        ref = policy.reference(0.2)
        expected = ctx["expert"].hand_kp * (ref - policy.home)
        np.testing.assert_allclose(tau, expected, atol=1e-12)
        assert policy.z_ref(0.2) == policy.hover_z

    def test_on_reference_mid_draw_leaves_only_press_bias(self, ctx):
        spec = TrialSpec(paper_height=0.045, seed=3)
        policy = ExpertPolicy(spec, ctx["expert"], ctx["params"], ctx["env"])
        t = policy.approach_s + 5.0 * ctx["expert"].blend_s
        # construct the exact on-reference state: sweep angle matches,
        # radius at draw_radius, z at z_ref, all velocities zero
        theta = policy._pose(policy.sweep(t), policy.z_ref(t))
        tau = policy.hand_torque(t, theta, np.zeros(3))
        l2, l3 = ctx["params"].l2, policy.l3_eff
        c2 = np.cos(theta[1])
        c23 = np.cos(theta[1] + theta[2])
        dz = np.array([0.0, l2 * c2 + l3 * c23, l3 * c23])
        np.testing.assert_allclose(tau, -policy.press_force * dz, atol=1e-12)

    def test_jitter_varies_across_seeds_deterministically(self, ctx):
        specs = [TrialSpec(paper_height=0.045, seed=s) for s in (0, 1)]
        p0a = ExpertPolicy(specs[0], ctx["expert"], ctx["params"], ctx["env"])
        p0b = ExpertPolicy(specs[0], ctx["expert"], ctx["params"], ctx["env"])
        p1 = ExpertPolicy(specs[1], ctx["expert"], ctx["params"], ctx["env"])
        assert p0a.amp == p0b.amp and p0a.phase == p0b.phase
        assert p0a.amp != p1.amp

    def test_descent_reference_is_monotone_until_floor(self, ctx):
        spec = TrialSpec(paper_height=0.045, seed=4)
        policy = ExpertPolicy(spec, ctx["expert"], ctx["params"], ctx["env"])
        zs = [policy.z_ref(t) for t in np.arange(policy.approach_s, 10.0, 0.1)]
        assert all(a >= b for a, b in zip(zs, zs[1:]))
        assert zs[-1] == pytest.approx(0.045 - spec.press_depth)


class TestCollectTrial:
    def test_step_count(self, short_trial):
        _, traj = short_trial
        assert len(traj) == 5000

    def test_determinism_bit_identical(self, ctx):
        spec = TrialSpec(paper_height=0.045, duration=2.0, seed=77)
        a = collect_trial(spec, ctx["params"], ctx["gains"], ctx["expert"], ctx["env"])
        b = collect_trial(spec, ctx["params"], ctx["gains"], ctx["expert"], ctx["env"])
        np.testing.assert_array_equal(a.master_theta, b.master_theta)
        np.testing.assert_array_equal(a.slave_tau, b.slave_tau)
        np.testing.assert_array_equal(a.contact_force, b.contact_force)

    def test_coupling_goals_hold(self, short_trial):
        _, traj = short_trial
        res = coupling_residuals(traj)
        assert res["pos_goal_fraction"] >= 0.99
        assert res["force_goal_fraction"] >= 0.95

    def test_action_reaction_in_contact(self, short_trial):
        _, traj = short_trial
        contact = traj.contact_force > 1e-6
        total = np.abs(traj.master_tau[contact] + traj.slave_tau[contact])
        assert np.mean(np.all(total < 0.05, axis=1)) > 0.95

    def test_no_contact_without_descent(self, ctx):
        # paper far below the floor reference: pen never reaches it
        env = ctx["cfg"].environment(12.0)
        spec = TrialSpec(paper_height=0.012, duration=3.0, seed=5)
        traj = collect_trial(spec, ctx["params"], ctx["gains"], ctx["expert"], env)
        assert np.all(traj.contact_force[: int(1.2 / traj.dt)] == 0.0)

    def test_divergence_guard(self, ctx):
        from dataclasses import replace

        spec = TrialSpec(paper_height=0.045, duration=3.0, seed=6)
        wild = replace(ctx["expert"], hand_kp=100000.0, hand_kd=0.0)
        with pytest.raises(SimulationDiverged):
            collect_trial(spec, ctx["params"], ctx["gains"], wild, ctx["env"])

    def test_ground_truth_contact_recorded(self, short_trial):
        _, traj = short_trial
        assert np.any(traj.contact_force > 0.5)
        # slave tau_ext is minus the contact torque mapped through J^T; its
        # joint-2 component is negative while pressing (tip below shoulder)
        pressing = traj.contact_force > 0.5
        assert np.median(traj.slave_tau_ext[pressing, 1]) < 0.0


class TestDownsample:
    def test_rate_reduction_row_count(self, short_trial):
        _, traj = short_trial
        t_ms, S, M = downsample(traj, 20)
        assert S.shape == (250, 9)
        assert M.shape == (250, 9)
        assert t_ms[1] - t_ms[0] == pytest.approx(20.0)

    def test_rows_are_exact_decimation(self, short_trial):
        _, traj = short_trial
        _, S, M = downsample(traj, 20)
        for i in (0, 7, 249):
            np.testing.assert_array_equal(S[i], traj.state_row("slave", 20 * i))
            np.testing.assert_array_equal(M[i], traj.state_row("master", 20 * i))

    def test_factor_one_is_identity(self, short_trial):
        _, traj = short_trial
        _, S, _ = downsample(traj, 1)
        assert S.shape[0] == len(traj)
        np.testing.assert_array_equal(S[3], traj.state_row("slave", 3))

    def test_indivisible_factor_rejected(self, short_trial):
        _, traj = short_trial
        with pytest.raises(LengthMismatch):
            downsample(traj, 33)


def toy_trials(n_trials=3, rows=40):
    rng = np.random.default_rng(9)
    trials = []
    for i in range(n_trials):
        trials.append(
            DatasetTrial(
                height_mm=45.0,
                t_ms=np.arange(rows) * 20.0,
                S=rng.normal(size=(rows, 9)),
                M=rng.normal(size=(rows, 9)),
            )
        )
    return trials


class TestDataset:
    def test_counts_and_stats(self):
        ds = build_dataset(toy_trials(15, 650))
        assert len(ds.trials) == 15
        assert ds.num_rows == 15 * 650
        all_s = np.vstack([t.S for t in ds.trials])
        np.testing.assert_allclose(ds.s_mean, all_s.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(ds.s_std, all_s.std(axis=0), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataset):
            build_dataset([])

    def test_missing_height_rejected(self):
        with pytest.raises(EmptyDataset):
            build_dataset(toy_trials(), heights_mm=[45.0, 70.0])

    def test_constant_channel_std_floored(self):
        trials = toy_trials(1, 30)
        trials[0].S[:, 4] = 2.5
        ds = build_dataset(trials)
        assert ds.s_std[4] == pytest.approx(1e-6)

    def test_round_trip_exact(self, tmp_path):
        ds = build_dataset(toy_trials())
        ds.meta = {"config_hash": "deadbeef", "seed": 3}
        path = tmp_path / "dataset.csv"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert len(loaded.trials) == len(ds.trials)
        for a, b in zip(loaded.trials, ds.trials):
            np.testing.assert_array_equal(a.S, b.S)
            np.testing.assert_array_equal(a.M, b.M)
            np.testing.assert_array_equal(a.t_ms, b.t_ms)
        np.testing.assert_array_equal(loaded.s_mean, ds.s_mean)
        np.testing.assert_array_equal(loaded.m_std, ds.m_std)
        assert loaded.meta["config_hash"] == "deadbeef"

    def test_stats_round_trip_to_high_precision(self, tmp_path):
        ds = build_dataset(toy_trials())
        path = tmp_path / "d.csv"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        recomputed = build_dataset(loaded.trials)
        np.testing.assert_allclose(recomputed.s_mean, ds.s_mean, atol=1e-12)
        np.testing.assert_allclose(recomputed.s_std, ds.s_std, atol=1e-12)

    def test_truncated_header_rejected(self, tmp_path):
        ds = build_dataset(toy_trials())
        path = tmp_path / "d.csv"
        save_dataset(ds, path)
        text = path.read_text().splitlines()
        text[0] = text[0].rsplit(",", 1)[0]  # drop tau3 column
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(SchemaError) as err:
            load_dataset(path)
        assert "tau3" in str(err.value)

    def test_extra_column_rejected(self, tmp_path):
        ds = build_dataset(toy_trials())
        path = tmp_path / "d.csv"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        lines[0] += ",extra"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError) as err:
            load_dataset(path)
        assert "extra" in str(err.value)

    def test_missing_stats_file_rejected(self, tmp_path):
        ds = build_dataset(toy_trials())
        path = tmp_path / "d.csv"
        save_dataset(ds, path)
        stats_path(path).unlink()
        with pytest.raises(SchemaError):
            load_dataset(path)

    def test_master_t0_mean(self):
        trials = toy_trials(4, 10)
        ds = build_dataset(trials)
        expected = np.mean([t.M[0] for t in trials], axis=0)
        np.testing.assert_allclose(ds.master_t0_mean(), expected, atol=1e-15)
