"""Experiment orchestration: collect -> train -> run -> report.

Every stage is a pure function of (config, output directory); outputs
embed the config hash and seed, and the report stage refuses to mix
artifacts produced under a different configuration. Stages are
deterministic, so rerunning one rewrites byte-identical files.
"""

from __future__ import annotations

import multiprocessing
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, RunFilter
from .dataset import Dataset, DatasetTrial, build_dataset, load_dataset, save_dataset
from .dynamics import jv
from .errors import BilatError, ConfigError, MissingLogs, SimulationDiverged
from .executor import load_log, run_autonomous, save_log
from .expert import ExpertPolicy, collect_trial, coupling_residuals, downsample, ik_planar
from .metrics import (
    amplitude_stats,
    prediction_variance,
    reproducibility_gap,
    success_check,
    variance_ratios,
)
from .network import load_model, save_model
from .training import train


def home_pose(cfg: ExperimentConfig) -> np.ndarray:
    expert = cfg.expert_config()
    params = cfg.robot_params()
    pen = cfg.get_float("env.pen_length")
    t2, t3 = ik_planar(expert.draw_radius, expert.home_z - params.base_height, params.l2, params.l3 + pen)
    return jv(0.0, t2, t3)


def dataset_path(out: Path) -> Path:
    return out / "dataset.csv"


def model_path(out: Path, scheme: str, k: int) -> Path:
    return out / "models" / f"{scheme}_k{k}.model"


def loss_path(out: Path, scheme: str, k: int) -> Path:
    return out / "models" / f"{scheme}_k{k}.loss.csv"


def cell_name(scheme: str, k: int, height_mm: float, mode: str) -> str:
    return f"{scheme}_k{k}_h{height_mm:g}_{mode}"


def log_paths(out: Path, scheme: str, k: int, height_mm: float, mode: str) -> tuple[Path, Path]:
    base = out / "runs" / cell_name(scheme, k, height_mm, mode)
    return base.with_suffix(".log.csv"), base.with_suffix(".traj.csv")


def _collect_one(args):
    cfg_values, spec = args
    cfg = ExperimentConfig(cfg_values)
    traj = collect_trial(spec, cfg.robot_params(), cfg.gains(), cfg.expert_config(), cfg.environment(spec.paper_height * 1000.0))
    t_ms, s_rows, m_rows = downsample(traj)
    residuals = coupling_residuals(traj)
    return DatasetTrial(height_mm=spec.paper_height * 1000.0, t_ms=t_ms, S=s_rows, M=m_rows), residuals


def cmd_collect(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> Path:
    """Run the trial plan and persist the paired dataset."""
    out.mkdir(parents=True, exist_ok=True)
    specs = cfg.trial_plan()
    work = [(cfg.values, spec) for spec in specs]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_collect_one, work)
    else:
        results = [_collect_one(w) for w in work]
    trials = []
    for i, (trial, res) in enumerate(results):
        trials.append(trial)
        print(
            f"trial {i:2d} height {trial.height_mm:5.1f} mm: "
            f"pos goal {res['pos_goal_fraction']:.1%}, force goal {res['force_goal_fraction']:.1%}, "
            f"contact steps {res['contact_steps']}"
        )
    dataset = build_dataset(trials, cfg.collect_heights_mm())
    dataset.meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    save_dataset(dataset, dataset_path(out))
    return dataset_path(out)


def cmd_train(
    cfg: ExperimentConfig, out: Path, jobs: int = 1, resume: bool = False, filt: RunFilter | None = None
) -> list[Path]:
    """Train every (scheme, k) in the grid; isolate per-job failures."""
    filt = filt or RunFilter()
    dataset = load_dataset(dataset_path(out))
    _check_hash(dataset.meta, cfg, dataset_path(out))
    (out / "models").mkdir(parents=True, exist_ok=True)
    jobs_list = [(scheme, k) for scheme, k in cfg.model_grid() if filt.matches(scheme, k)]
    paths = []
    failures = []
    for scheme, k in jobs_list:
        path = model_path(out, scheme, k)
        if resume and path.exists():
            print(f"train {scheme} k={k}: checkpoint exists, skipped")
            paths.append(path)
            continue
        try:
            model, curve = train(dataset, cfg.model_config(scheme, k), config_hash=cfg.config_hash())
            save_model(model, path)
            with open(loss_path(out, scheme, k), "w") as fh:
                fh.write(f'# {{"config_hash": "{cfg.config_hash()}", "seed": {cfg.seed}}}\n')
                fh.write("epoch,loss\n")
                for epoch, value in enumerate(curve):
                    fh.write(f"{epoch},{value!r}\n")
            final = curve[-1] if curve else float("nan")
            print(f"train {scheme} k={k}: {len(curve)} epochs, final loss {final:.6f}")
            paths.append(path)
        except BilatError as exc:
            failures.append((scheme, k, str(exc)))
            print(f"train {scheme} k={k}: FAILED ({exc})", file=sys.stderr)
    if failures:
        raise BilatError(f"{len(failures)} training job(s) failed: {failures}")
    return paths


def _run_one(args):
    cfg_values, out_str, scheme, k, height_mm, mode = args
    cfg = ExperimentConfig(cfg_values)
    out = Path(out_str)
    model = load_model(model_path(out, scheme, k))
    if model.config_hash and model.config_hash != cfg.config_hash():
        raise ConfigError(f"checkpoint {scheme}_k{k} was trained under config {model.config_hash}, "
                          f"current is {cfg.config_hash()}")
    env = cfg.environment(height_mm)
    try:
        log = run_autonomous(
            model,
            mode,
            env,
            cfg.robot_params(),
            cfg.gains(),
            home_pose(cfg),
            duration=cfg.get_float("run.duration_s"),
            lpf_k=cfg.get_float("run.lpf_k"),
            perturb=cfg.perturbation(),
            safety_omega=cfg.get_float("expert.safety_omega"),
        )
    except SimulationDiverged as exc:
        log = exc.log
    log.meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    lp, tp = log_paths(out, scheme, k, height_mm, mode)
    save_log(log, lp, tp)
    return cell_name(scheme, k, height_mm, mode), log.diverged


def cmd_run(cfg: ExperimentConfig, out: Path, jobs: int = 1, filt: RunFilter | None = None) -> list[Path]:
    """Execute every (checkpoint, height, mode) cell of the plan."""
    filt = filt or RunFilter()
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cells = [c for c in cfg.run_cells() if filt.matches(*c)]
    if not cells:
        raise ConfigError("run plan is empty after filtering")
    work = [(cfg.values, str(out), *c) for c in cells]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_run_one, work)
    else:
        results = [_run_one(w) for w in work]
    for name, diverged in results:
        print(f"run {name}: {'DIVERGED' if diverged else 'ok'}")
    return [log_paths(out, *c)[0] for c in cells]


def _check_hash(meta: dict, cfg: ExperimentConfig, path) -> None:
    found = str(meta.get("config_hash", ""))
    if found and found != cfg.config_hash():
        raise ConfigError(f"{path}: produced under config {found}, current is {cfg.config_hash()}")


def _fmt(x: float) -> str:
    return repr(round(float(x), 9))


def cmd_report(cfg: ExperimentConfig, out: Path, filt: RunFilter | None = None) -> dict[str, Path]:
    """Aggregate logs into the success matrix, ratio table, and amplitude gaps."""
    filt = filt or RunFilter()
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    params = cfg.robot_params()
    criterion = cfg.criterion()
    weights = cfg.ratio_weights()

    cells = [c for c in cfg.run_cells() if filt.matches(*c)]
    missing = [cell_name(*c) for c in cells if not log_paths(out, *c)[0].exists()]
    if missing:
        raise MissingLogs(f"missing logs for cells: {', '.join(missing)}")
    logs = {}
    for c in cells:
        lp, tp = log_paths(out, *c)
        log = load_log(lp, tp)
        _check_hash(log.meta, cfg, lp)
        logs[c] = log

    # success matrix
    success_path = reports / "success_matrix.csv"
    per_scheme: dict[str, list[bool]] = {}
    with open(success_path, "w") as fh:
        fh.write(f'# {{"config_hash": "{cfg.config_hash()}", "seed": {cfg.seed}}}\n')
        fh.write("height_mm,scheme,k,mode,success,reason\n")
        for scheme, k, height, mode in cells:
            log = logs[(scheme, k, height, mode)]
            result = success_check(log, cfg.environment(height), criterion, params)
            per_scheme.setdefault(scheme, []).append(result.ok)
            reason = result.reason.replace(",", ";")
            fh.write(f"{height:g},{scheme},{k},{mode},{int(result.ok)},{reason}\n")

    # variance-ratio table (autoregressive schemes need both modes)
    ratio_path = reports / "ratio_table.csv"
    with open(ratio_path, "w") as fh:
        fh.write(f'# {{"config_hash": "{cfg.config_hash()}", "seed": {cfg.seed}}}\n')
        fh.write("height_mm,scheme,k,v_theta_ratio,v_dtheta_ratio,v_tau_ratio,v_total_ratio\n")
        for scheme, k in cfg.model_grid():
            if scheme == "S2M" or not filt.matches(scheme, k):
                continue
            for height in cfg.run_heights_mm():
                conv = logs.get((scheme, k, height, "conv"))
                fb = logs.get((scheme, k, height, "fb"))
                try:
                    if conv is None or fb is None:
                        raise MissingLogs("mode pair incomplete")
                    rep = variance_ratios(prediction_variance(conv), prediction_variance(fb), weights)
                    row = [_fmt(rep.v_theta_ratio), _fmt(rep.v_dtheta_ratio), _fmt(rep.v_tau_ratio), _fmt(rep.v_total_ratio)]
                except BilatError:
                    row = ["N/A"] * 4
                fh.write(f"{height:g},{scheme},{k}," + ",".join(row) + "\n")

    # amplitude-gap table at the comparison height
    gaps_path = reports / "amplitude_gaps.csv"
    gap_height = cfg.get_float("metric.gap_height_mm")
    dataset = load_dataset(dataset_path(out))
    _check_hash(dataset.meta, cfg, dataset_path(out))
    period = cfg.get_float("collect.arc_period_s")
    window = (cfg.get_float("metric.window_start_s"), cfg.get_float("collect.duration_s"))
    train_stats: dict[str, tuple[float, float]] = {}
    for quantity, idx in (("theta1", 0), ("tau1", 6)):
        stats = [
            amplitude_stats(trial.t_ms / 1000.0, trial.S[:, idx], period, window)
            for trial in dataset.trials
            if abs(trial.height_mm - gap_height) < 1e-9
        ]
        if stats:
            train_stats[quantity] = (float(np.mean([s[0] for s in stats])), float(np.mean([s[1] for s in stats])))
    with open(gaps_path, "w") as fh:
        fh.write(f'# {{"config_hash": "{cfg.config_hash()}", "seed": {cfg.seed}}}\n')
        fh.write("scheme,k,mode,quantity,train_amp,auto_amp,amp_gap,train_mean,auto_mean,mean_gap\n")
        run_window = (cfg.get_float("metric.window_start_s"), cfg.get_float("run.duration_s"))
        for scheme, k, height, mode in cells:
            if abs(height - gap_height) > 1e-9:
                continue
            log = logs[(scheme, k, height, mode)]
            for quantity, idx in (("theta1", 0), ("tau1", 6)):
                if quantity not in train_stats:
                    continue
                try:
                    auto = amplitude_stats(log.t_ms / 1000.0, log.s_res[:, idx], period, run_window)
                except BilatError:
                    fh.write(f"{scheme},{k},{mode},{quantity},N/A,N/A,N/A,N/A,N/A,N/A\n")
                    continue
                tr = train_stats[quantity]
                d_amp, d_mean = reproducibility_gap(tr, auto)
                fh.write(
                    f"{scheme},{k},{mode},{quantity},{_fmt(tr[0])},{_fmt(auto[0])},{_fmt(d_amp)},"
                    f"{_fmt(tr[1])},{_fmt(auto[1])},{_fmt(d_mean)}\n"
                )

    for scheme in sorted(per_scheme):
        oks = per_scheme[scheme]
        print(f"{scheme}: success rate {sum(oks)}/{len(oks)} = {sum(oks) / len(oks):.1%}")
    return {"success": success_path, "ratios": ratio_path, "gaps": gaps_path}


def cmd_all(cfg: ExperimentConfig, out: Path, jobs: int = 1, resume: bool = False, filt: RunFilter | None = None):
    cmd_collect(cfg, out, jobs)
    cmd_train(cfg, out, jobs, resume=resume, filt=filt)
    cmd_run(cfg, out, jobs, filt=filt)
    return cmd_report(cfg, out, filt=filt)
