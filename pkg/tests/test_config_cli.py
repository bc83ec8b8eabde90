import numpy as np
import pytest

from bilat.cli import main
from bilat.config import DEFAULTS, ExperimentConfig, RunFilter, load_config
from bilat.errors import ConfigError


class TestConfigFile:
    def test_defaults_load(self):
        cfg = load_config()
        assert cfg.seed == 0
        assert cfg.gains().kp == 400.0
        assert len(cfg.trial_plan()) == 15

    def test_file_overrides_and_comments(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# experiment tweak\n"
            "seed = 42\n"
            "gains.kp = 500.0   # stiffer\n"
            "\n"
            "collect.heights_mm = 70,45\n"
        )
        cfg = load_config(path)
        assert cfg.seed == 42
        assert cfg.gains().kp == 500.0
        assert cfg.collect_heights_mm() == [70.0, 45.0]

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("collect.heihts_mm = 70\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("just some text\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_hash_changes_with_values(self):
        a = load_config()
        b = load_config(overrides={"seed": "1"})
        assert a.config_hash() != b.config_hash()
        c = load_config(overrides={"seed": "0"})
        assert a.config_hash() == c.config_hash()

    def test_canonical_text_is_sorted_and_complete(self):
        cfg = load_config()
        lines = cfg.to_text().splitlines()
        keys = [line.split(" = ")[0] for line in lines]
        assert keys == sorted(DEFAULTS)

    def test_trial_plan_seeds_distinct(self):
        cfg = load_config()
        seeds = [spec.seed for spec in cfg.trial_plan()]
        assert len(set(seeds)) == len(seeds)

    def test_empty_plan_rejected(self):
        cfg = load_config(overrides={"collect.heights_mm": ""})
        with pytest.raises(ConfigError, match="no trials"):
            cfg.trial_plan()

    def test_zero_trials_rejected(self):
        cfg = load_config(overrides={"collect.trials_per_height": "0"})
        with pytest.raises(ConfigError, match="no trials"):
            cfg.trial_plan()


class TestModelGrid:
    def test_default_grid_has_seven_jobs(self):
        assert len(load_config().model_grid()) == 7

    def test_s2m_autoregressive_rejected(self):
        cfg = load_config(overrides={"train.grid": "S2M:5"})
        with pytest.raises(ConfigError, match="S2M"):
            cfg.model_grid()

    def test_unknown_scheme_rejected(self):
        cfg = load_config(overrides={"train.grid": "X2Y:1"})
        with pytest.raises(ConfigError):
            cfg.model_grid()

    def test_epochs_map_must_cover_grid(self):
        cfg = load_config(overrides={"train.grid": "S2SM:7"})
        with pytest.raises(ConfigError, match="k=7"):
            cfg.model_grid()

    def test_default_run_cells_count(self):
        # 5 heights x (1 S2M conv + 6 autoregressive jobs x 2 modes)
        assert len(load_config().run_cells()) == 65

    def test_model_seeds_distinct_per_job(self):
        cfg = load_config()
        seeds = {cfg.model_config(s, k).seed for s, k in cfg.model_grid()}
        assert len(seeds) == 7

    def test_epochs_follow_autoregression_number(self):
        cfg = load_config()
        assert cfg.model_config("S2M", 1).epochs == 1000
        assert cfg.model_config("S2SM", 5).epochs == 3000
        assert cfg.model_config("SM2SM", 10).epochs == 4000


class TestRunFilter:
    def test_parse_and_match(self):
        filt = RunFilter.parse("scheme=S2SM,k=5,height=45,mode=fb")
        assert filt.matches("S2SM", 5, 45.0, "fb")
        assert not filt.matches("S2SM", 5, 45.0, "conv")
        assert not filt.matches("SM2SM", 5, 45.0, "fb")

    def test_empty_filter_matches_all(self):
        filt = RunFilter.parse(None)
        assert filt.matches("S2M", 1, 19.0, "conv")

    def test_single_cell_selection(self):
        cfg = load_config()
        filt = RunFilter.parse("scheme=S2SM,k=1,height=70,mode=conv")
        cells = [c for c in cfg.run_cells() if filt.matches(*c)]
        assert cells == [("S2SM", 1, 70.0, "conv")]

    def test_bad_terms_rejected(self):
        with pytest.raises(ConfigError):
            RunFilter.parse("scheme")
        with pytest.raises(ConfigError):
            RunFilter.parse("mode=sideways")
        with pytest.raises(ConfigError):
            RunFilter.parse("color=red")


class TestPerturbation:
    def test_disabled_by_default(self):
        assert load_config().perturbation() is None

    def test_enabled(self):
        cfg = load_config(overrides={"run.perturb_time_s": "6.0", "run.perturb_delta_mm": "-12"})
        assert cfg.perturbation() == (6.0, -0.012)


class TestCliValidation:
    def test_s2m_feedback_filter_is_empty_plan(self, tmp_path):
        rc = main(["run", "--out", str(tmp_path), "--filter", "scheme=S2M,mode=fb"])
        assert rc == 2

    def test_unknown_stage_rejected_by_argparse(self):
        with pytest.raises(SystemExit):
            main(["explode"])

    def test_missing_config_file(self, tmp_path):
        rc = main(["collect", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)])
        assert rc == 2

    def test_report_without_logs_fails_cleanly(self, tmp_path):
        rc = main(["report", "--out", str(tmp_path)])
        assert rc == 3

    def test_train_without_dataset_fails_cleanly(self, tmp_path):
        rc = main(["train", "--out", str(tmp_path)])
        assert rc == 3
