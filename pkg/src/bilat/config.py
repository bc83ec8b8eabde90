"""Experiment configuration: one flat key-value file drives every stage.

Lines are ``section.key = value``; ``#`` starts a comment. Every key has
a default, unknown keys are rejected, and the canonical sorted dump is
hashed so outputs can be tied to the exact configuration that produced
them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .control import Gains
from .dynamics import Environment, RobotParams, jv
from .errors import ConfigError
from .expert import ExpertConfig, TrialSpec
from .network import SCHEMES, ModelConfig
from .metrics import SuccessCriterion

DEFAULTS: dict[str, str] = {
    "seed": "0",
    "sim.inertia": "0.003,0.003,0.003",
    "sim.friction": "0.05,0.01,0.01",
    "sim.gravity_coeff": "0.0,0.15,0.08",
    "sim.l2": "0.135",
    "sim.l3": "0.135",
    "sim.base_height": "0.10",
    "env.contact_stiffness": "2000.0",
    "env.contact_damping": "5.0",
    "env.pen_length": "0.0",
    "env.friction_mu": "0.3",
    "env.friction_v_eps": "0.01",
    "gains.kp": "400.0",
    "gains.kd": "60.0",
    "gains.kf": "1.0",
    "gains.g_dob": "200.0",
    "gains.g_pd": "200.0",
    "expert.draw_radius": "0.18",
    "expert.home_z": "0.09",
    "expert.hover_z": "0.08",
    "expert.descent_speed": "0.08",
    "expert.approach_s": "1.0",
    "expert.blend_s": "0.5",
    "expert.press_force": "1.5",
    "expert.hand_kp": "25.0",
    "expert.hand_kd": "0.3",
    "expert.radial_kp": "300.0",
    "expert.radial_kd": "10.0",
    "expert.vertical_kp": "8.0",
    "expert.vertical_kd": "15.0",
    "expert.jitter_amplitude": "0.02",
    "expert.jitter_phase": "0.1",
    "expert.jitter_period": "0.05",
    "expert.jitter_press": "0.1",
    "expert.jitter_descent": "0.3",
    "expert.jitter_approach": "0.3",
    "expert.jitter_hover": "0.003",
    "expert.jitter_radius": "0.008",
    "expert.safety_omega": "50.0",
    "collect.heights_mm": "70,45,19",
    "collect.trials_per_height": "5",
    "collect.duration_s": "13.0",
    "collect.arc_amplitude": "0.35",
    "collect.arc_period_s": "2.0",
    "collect.press_depth": "0.003",
    "train.grid": "S2M:1;SM2SM:1,5,10;S2SM:1,5,10",
    "train.hidden_size": "64",
    "train.num_layers": "2",
    "train.window": "100",
    "train.stride": "10",
    "train.batch_size": "64",
    "train.learning_rate": "0.001",
    "train.grad_clip": "1.0",
    "train.input_noise": "0.1",
    "train.epochs": "1:1000,5:3000,10:4000",
    "run.heights_mm": "70,55,45,31,19",
    "run.duration_s": "13.0",
    "run.lpf_k": "0.5",
    "run.perturb_time_s": "0.0",
    "run.perturb_delta_mm": "0.0",
    "metric.force_band_n": "0.5,3.0",
    "metric.duty_min": "0.9",
    "metric.waypoint_tol_m": "0.005",
    "metric.omega_max": "10.0",
    "metric.window_start_s": "2.5",
    "metric.waypoint_theta1": "0.35",
    "metric.gap_height_mm": "45",
    "metric.ratio_weights": "1.0,1.0,1.0",
}


@dataclass(frozen=True)
class RunFilter:
    """Optional cell filter: scheme / k / height_mm / mode."""

    scheme: str | None = None
    k: int | None = None
    height_mm: float | None = None
    mode: str | None = None

    @classmethod
    def parse(cls, text: str | None) -> "RunFilter":
        if not text:
            return cls()
        kwargs = {}
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ConfigError(f"bad filter term {part!r}; expected key=value")
            key, value = (s.strip() for s in part.split("=", 1))
            if key == "scheme":
                kwargs["scheme"] = value
            elif key == "k":
                kwargs["k"] = int(value)
            elif key == "height":
                kwargs["height_mm"] = float(value)
            elif key == "mode":
                if value not in ("conv", "fb"):
                    raise ConfigError(f"filter mode must be conv or fb, got {value!r}")
                kwargs["mode"] = value
            else:
                raise ConfigError(f"unknown filter key {key!r}")
        return cls(**kwargs)

    def matches(self, scheme: str, k: int, height_mm: float | None = None, mode: str | None = None) -> bool:
        if self.scheme is not None and scheme != self.scheme:
            return False
        if self.k is not None and k != self.k:
            return False
        if self.height_mm is not None and height_mm is not None and abs(height_mm - self.height_mm) > 1e-9:
            return False
        if self.mode is not None and mode is not None and mode != self.mode:
            return False
        return True


@dataclass
class ExperimentConfig:
    values: dict[str, str] = field(default_factory=lambda: dict(DEFAULTS))

    # -- raw access ------------------------------------------------------
    def _get(self, key: str) -> str:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"missing config key {key!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self._get(key))
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a number: {self._get(key)!r}") from None

    def get_int(self, key: str) -> int:
        try:
            return int(self._get(key))
        except ValueError:
            raise ConfigError(f"config key {key!r} is not an integer: {self._get(key)!r}") from None

    def get_floats(self, key: str) -> list[float]:
        try:
            return [float(v) for v in self._get(key).split(",") if v.strip() != ""]
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a number list: {self._get(key)!r}") from None

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = str(value)

    # -- identity --------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    @property
    def seed(self) -> int:
        return self.get_int("seed")

    # -- domain objects ---------------------------------------------------
    def robot_params(self) -> RobotParams:
        inertia = self.get_floats("sim.inertia")
        friction = self.get_floats("sim.friction")
        gravity = self.get_floats("sim.gravity_coeff")
        if len(inertia) != 3 or len(friction) != 3 or len(gravity) != 3:
            raise ConfigError("sim.inertia/friction/gravity_coeff must have 3 entries")
        return RobotParams(
            inertia=jv(*inertia),
            friction=jv(*friction),
            gravity_coeff=jv(*gravity),
            l2=self.get_float("sim.l2"),
            l3=self.get_float("sim.l3"),
            base_height=self.get_float("sim.base_height"),
        )

    def environment(self, height_mm: float) -> Environment:
        return Environment(
            paper_height=height_mm / 1000.0,
            contact_stiffness=self.get_float("env.contact_stiffness"),
            contact_damping=self.get_float("env.contact_damping"),
            pen_length=self.get_float("env.pen_length"),
            friction_mu=self.get_float("env.friction_mu"),
            friction_v_eps=self.get_float("env.friction_v_eps"),
        )

    def gains(self) -> Gains:
        return Gains(
            kp=self.get_float("gains.kp"),
            kd=self.get_float("gains.kd"),
            kf=self.get_float("gains.kf"),
            g_dob=self.get_float("gains.g_dob"),
            g_pd=self.get_float("gains.g_pd"),
        )

    def expert_config(self) -> ExpertConfig:
        return ExpertConfig(
            draw_radius=self.get_float("expert.draw_radius"),
            home_z=self.get_float("expert.home_z"),
            hover_z=self.get_float("expert.hover_z"),
            descent_speed=self.get_float("expert.descent_speed"),
            approach_s=self.get_float("expert.approach_s"),
            blend_s=self.get_float("expert.blend_s"),
            press_force=self.get_float("expert.press_force"),
            hand_kp=self.get_float("expert.hand_kp"),
            hand_kd=self.get_float("expert.hand_kd"),
            radial_kp=self.get_float("expert.radial_kp"),
            radial_kd=self.get_float("expert.radial_kd"),
            vertical_kp=self.get_float("expert.vertical_kp"),
            vertical_kd=self.get_float("expert.vertical_kd"),
            jitter_amplitude=self.get_float("expert.jitter_amplitude"),
            jitter_phase=self.get_float("expert.jitter_phase"),
            jitter_period=self.get_float("expert.jitter_period"),
            jitter_press=self.get_float("expert.jitter_press"),
            jitter_descent=self.get_float("expert.jitter_descent"),
            jitter_approach=self.get_float("expert.jitter_approach"),
            jitter_hover=self.get_float("expert.jitter_hover"),
            jitter_radius=self.get_float("expert.jitter_radius"),
            safety_omega=self.get_float("expert.safety_omega"),
        )

    def collect_heights_mm(self) -> list[float]:
        heights = self.get_floats("collect.heights_mm")
        if not heights:
            raise ConfigError("collect.heights_mm is empty: no trials")
        return heights

    def trial_plan(self) -> list[TrialSpec]:
        per_height = self.get_int("collect.trials_per_height")
        if per_height < 1:
            raise ConfigError("collect.trials_per_height must be >= 1: no trials")
        specs = []
        index = 0
        for height in self.collect_heights_mm():
            for _ in range(per_height):
                specs.append(
                    TrialSpec(
                        paper_height=height / 1000.0,
                        duration=self.get_float("collect.duration_s"),
                        arc_amplitude=self.get_float("collect.arc_amplitude"),
                        arc_period=self.get_float("collect.arc_period_s"),
                        press_depth=self.get_float("collect.press_depth"),
                        seed=self.seed * 1000 + index,
                    )
                )
                index += 1
        return specs

    def epochs_map(self) -> dict[int, int]:
        out = {}
        for part in self._get("train.epochs").split(","):
            part = part.strip()
            if not part:
                continue
            try:
                k, ep = part.split(":")
                out[int(k)] = int(ep)
            except ValueError:
                raise ConfigError(f"bad train.epochs entry {part!r}; expected k:epochs") from None
        return out

    def model_grid(self) -> list[tuple[str, int]]:
        grid = []
        epochs = self.epochs_map()
        for group in self._get("train.grid").split(";"):
            group = group.strip()
            if not group:
                continue
            if ":" not in group:
                raise ConfigError(f"bad train.grid group {group!r}; expected SCHEME:k[,k...]")
            scheme, ks = group.split(":", 1)
            scheme = scheme.strip()
            if scheme not in SCHEMES:
                raise ConfigError(f"unknown scheme {scheme!r} in train.grid")
            for k_str in ks.split(","):
                k = int(k_str)
                if scheme == "S2M" and k != 1:
                    raise ConfigError("S2M is non-autoregressive: only k=1 is valid")
                if k < 1:
                    raise ConfigError(f"autoregression number must be >= 1, got {k}")
                if k not in epochs:
                    raise ConfigError(f"train.epochs has no entry for k={k}")
                grid.append((scheme, k))
        if not grid:
            raise ConfigError("train.grid is empty")
        return grid

    def model_config(self, scheme: str, k: int) -> ModelConfig:
        grid = self.model_grid()
        if (scheme, k) not in grid:
            raise ConfigError(f"({scheme}, k={k}) not in train.grid")
        return ModelConfig(
            scheme=scheme,
            autoregression_k=k,
            hidden_size=self.get_int("train.hidden_size"),
            num_layers=self.get_int("train.num_layers"),
            epochs=self.epochs_map()[k],
            learning_rate=self.get_float("train.learning_rate"),
            window=self.get_int("train.window"),
            stride=self.get_int("train.stride"),
            batch_size=self.get_int("train.batch_size"),
            grad_clip=self.get_float("train.grad_clip"),
            input_noise=self.get_float("train.input_noise"),
            seed=self.seed * 100 + grid.index((scheme, k)),
        )

    def run_heights_mm(self) -> list[float]:
        return self.get_floats("run.heights_mm")

    def run_cells(self) -> list[tuple[str, int, float, str]]:
        """(scheme, k, height_mm, mode) grid; feedback only for autoregressive schemes."""
        cells = []
        for scheme, k in self.model_grid():
            for height in self.run_heights_mm():
                cells.append((scheme, k, height, "conv"))
                if scheme != "S2M":
                    cells.append((scheme, k, height, "fb"))
        return cells

    def perturbation(self) -> tuple[float, float] | None:
        t = self.get_float("run.perturb_time_s")
        delta = self.get_float("run.perturb_delta_mm")
        if t > 0.0 and delta != 0.0:
            return (t, delta / 1000.0)
        return None

    def criterion(self) -> SuccessCriterion:
        band = self.get_floats("metric.force_band_n")
        if len(band) != 2:
            raise ConfigError("metric.force_band_n must have two entries")
        return SuccessCriterion(
            force_band=(band[0], band[1]),
            duty_min=self.get_float("metric.duty_min"),
            waypoint_tol=self.get_float("metric.waypoint_tol_m"),
            omega_max=self.get_float("metric.omega_max"),
            window_start_s=self.get_float("metric.window_start_s"),
            waypoint_theta1=self.get_float("metric.waypoint_theta1"),
            draw_radius=self.get_float("expert.draw_radius"),
            period_s=self.get_float("collect.arc_period_s"),
        )

    def ratio_weights(self) -> tuple[float, float, float]:
        w = self.get_floats("metric.ratio_weights")
        if len(w) != 3:
            raise ConfigError("metric.ratio_weights must have three entries")
        return (w[0], w[1], w[2])


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, optionally overlaid by a config file and explicit overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in stripped.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg.values[key] = value
    if overrides:
        for key, value in overrides.items():
            cfg.set(key, value)
    return cfg
