"""Run configuration: schema, TOML parsing, deterministic serialization.

One TOML file fully describes a run. Every key has a default, unknown
keys are rejected with the offending section.key named, and
parse(serialize(config)) is a fixed point. Environment variables of the
form LIDARFLOCK_<SECTION>__<KEY> override file values.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from .baseline import BaselineParams
from .net import NetConfig
from .ppo import PpoParams
from .reward import RewardParams, TerminationConfig
from .world import ScenarioConfig

ENV_PREFIX = "LIDARFLOCK_"


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioSection:
    n_followers: int = 4
    goal_radius: float = 30.0
    spawn_spacing: float = 1.6
    leader_speed_range: tuple = (1.0, 1.2)
    episode_time_limit: float = 60.0
    dt: float = 0.1
    n_pillars: int = 12
    min_gap: float = 0.25
    pillar_radius_range: tuple = (0.3, 0.8)
    pillar_height: float = 5.0
    spawn_altitude: float = 1.5
    seed: int = 0

    def to_scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(
            n_followers=self.n_followers,
            min_gap=self.min_gap if self.n_pillars > 0 else None,
            goal_radius=self.goal_radius,
            spawn_spacing=self.spawn_spacing,
            leader_speed_range=tuple(self.leader_speed_range),
            seed=self.seed,
            episode_time_limit=self.episode_time_limit,
            dt=self.dt,
            n_pillars=self.n_pillars,
            pillar_radius_range=tuple(self.pillar_radius_range),
            pillar_height=self.pillar_height,
            spawn_altitude=self.spawn_altitude,
        ).validate()


@dataclass
class EnvSection:
    mode: str = "train"
    sigma_pos: float = 0.02
    sigma_vel: float = 0.05
    ego_delay: float = 0.1
    neighbor_delay: float = 0.2
    grid_delay: float = 0.1


@dataclass
class TrainSection:
    total_env_steps: int = 100000
    n_envs: int = 8
    checkpoint_every: int = 0


@dataclass
class EvalSection:
    n_trials: int = 20
    seeds: tuple = ()
    max_steps: int = 0          # 0 -> episode time limit governs
    controller: str = "policy"  # or "baseline"
    save_trajectories: bool = False
    trajectory_format: str = "jsonl"


@dataclass
class AblateSection:
    configurations: tuple = ("proposed", "no_flocking")
    total_env_steps: int = 60000
    eval_trials: int = 10


@dataclass
class OutputSection:
    directory: str = "runs/out"


@dataclass
class RunConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    reward: RewardParams = field(default_factory=RewardParams)
    termination: TerminationConfig = field(default_factory=TerminationConfig)
    env: EnvSection = field(default_factory=EnvSection)
    rl: PpoParams = field(default_factory=PpoParams)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    evaluation: EvalSection = field(default_factory=EvalSection)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    ablate: AblateSection = field(default_factory=AblateSection)
    output: OutputSection = field(default_factory=OutputSection)

    def eval_seeds(self):
        if self.evaluation.seeds:
            return [int(s) for s in self.evaluation.seeds]
        base = self.scenario.seed
        return [base + i for i in range(self.evaluation.n_trials)]


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}

ABLATION_NAMES = ("proposed", "no_flocking", "no_obstacle", "no_stability",
                  "no_perception", "uniform_weights")


def ablation_reward(base: RewardParams, name: str) -> RewardParams:
    """Reward configuration for a named ablation."""
    if name == "proposed":
        return dataclasses.replace(base, disabled_terms=())
    if name == "no_flocking":
        return dataclasses.replace(base,
                                   disabled_terms=("separation", "cohesion"))
    if name == "no_obstacle":
        return dataclasses.replace(base,
                                   disabled_terms=("proximity", "direction"))
    if name == "no_stability":
        return dataclasses.replace(base,
                                   disabled_terms=("altitude", "attitude"))
    if name == "no_perception":
        return dataclasses.replace(base,
                                   disabled_terms=("visibility", "recovery"))
    if name == "uniform_weights":
        return dataclasses.replace(base, w_flock=1.0, w_obstacle=1.0,
                                   w_stable=1.0, w_perception=1.0)
    raise ConfigError(f"unknown ablation configuration '{name}'; "
                      f"known: {', '.join(ABLATION_NAMES)}")


# ----- coercion -----

def _coerce(section, key, default, value):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected array, got {value!r}")
        if len(default) == 0:
            # untyped empty default: homogeneous integer or string array
            if all(isinstance(v, str) for v in value):
                return tuple(value)
            if all(isinstance(v, int) and not isinstance(v, bool)
                   for v in value):
                return tuple(value)
            raise ConfigError(f"{where}: expected array of integers or strings")
        if isinstance(default[0], str):
            if not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{where}: expected array of strings")
            return tuple(value)
        if isinstance(default[0], int):
            if not all(isinstance(v, int) and not isinstance(v, bool)
                       for v in value):
                raise ConfigError(f"{where}: expected array of integers")
            return tuple(value)
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where}: expected numeric array")
            out.append(float(v))
        return tuple(out)
    raise ConfigError(f"{where}: unsupported field type")


def _apply_section(obj, section_name, data):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key {section_name}.{key}")
        setattr(obj, key, _coerce(section_name, key, getattr(obj, key), value))


def _env_overrides(environ):
    """{(section, key): parsed value} from LIDARFLOCK_SECTION__KEY vars."""
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        body = name[len(ENV_PREFIX):]
        if "__" not in body:
            continue
        section, key = body.split("__", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        out[(section.lower(), key.lower())] = value
    return out


def parse_config(text: str = None, path=None, environ=None) -> RunConfig:
    """Build a RunConfig from defaults, then a TOML document, then
    environment overrides. Raises ConfigError with section.key context."""
    cfg = RunConfig()
    data = {}
    if text is not None and path is not None:
        raise ValueError("pass text or path, not both")
    if path is not None:
        with open(path, "rb") as f:
            try:
                data = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    elif text is not None:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(exc)) from exc

    for section_name, content in data.items():
        if section_name not in _SECTIONS:
            raise ConfigError(f"unknown section [{section_name}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section_name}] must be a table")
        _apply_section(getattr(cfg, section_name), section_name, content)

    if environ is None:
        environ = os.environ
    for (section, key), value in sorted(_env_overrides(environ).items()):
        if section not in _SECTIONS:
            raise ConfigError(f"env override names unknown section '{section}'")
        obj = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(obj)}
        if key not in names:
            raise ConfigError(f"env override names unknown key {section}.{key}")
        setattr(obj, key, _coerce(section, key, getattr(obj, key), value))

    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    try:
        cfg.scenario.to_scenario_config()
        cfg.reward.validate()
        cfg.rl.validate()
        cfg.baseline.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.env.mode not in ("train", "eval"):
        raise ConfigError("env.mode must be 'train' or 'eval'")
    if cfg.evaluation.controller not in ("policy", "baseline"):
        raise ConfigError("evaluation.controller must be 'policy' or 'baseline'")
    if cfg.evaluation.trajectory_format not in ("jsonl", "binary"):
        raise ConfigError("evaluation.trajectory_format must be "
                          "'jsonl' or 'binary'")
    if cfg.train.total_env_steps < 1 or cfg.train.n_envs < 1:
        raise ConfigError("train.total_env_steps and train.n_envs "
                          "must be positive")
    if cfg.evaluation.n_trials < 1:
        raise ConfigError("evaluation.n_trials must be >= 1")
    from .reward import TERM_NAMES
    for term in cfg.reward.disabled_terms:
        if term not in TERM_NAMES:
            raise ConfigError(f"reward.disabled_terms: unknown term '{term}'")
    for name in cfg.ablate.configurations:
        ablation_reward(cfg.reward, name)
    return cfg


# ----- serialization -----

def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize value {v!r}")


def serialize_config(cfg: RunConfig) -> str:
    """Deterministic TOML text: sections and keys in schema order."""
    lines = []
    for section_name in _SECTIONS:
        obj = getattr(cfg, section_name)
        lines.append(f"[{section_name}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def default_config_text() -> str:
    return serialize_config(RunConfig())
