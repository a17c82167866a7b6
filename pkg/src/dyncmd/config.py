"""Run configuration: nested dataclasses loaded from strict JSON.

Every field has a default. Unknown keys raise :class:`ConfigError` so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .motion import CLIP_KINDS
from .nets import NetConfig
from .physim import RobotModel
from .task import TaskConfig


class ConfigError(ValueError):
    pass


@dataclass
class PpoConfig:
    num_envs: int = 64
    rollout_len: int = 24
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    # learner-side reward multiplier; env rewards stay unscaled in the logs
    reward_scale: float = 0.02
    iterations: int = 300
    checkpoint_every: int = 50
    bootstrap_timeouts: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ConfigError("gamma and lam must lie in [0, 1]")
        if self.clip_ratio <= 0:
            raise ConfigError("clip_ratio must be > 0")
        if self.num_envs < 1 or self.rollout_len < 1 or self.epochs < 1 or self.minibatches < 1:
            raise ConfigError("num_envs, rollout_len, epochs, minibatches must be >= 1")
        if self.num_envs * self.rollout_len < self.minibatches:
            raise ConfigError("fewer samples than minibatches")
        if self.reward_scale <= 0:
            raise ConfigError("reward_scale must be > 0")
        if self.lr <= 0 or self.max_grad_norm <= 0 or self.iterations < 0 or self.checkpoint_every < 1:
            raise ConfigError("lr, max_grad_norm, checkpoint_every must be positive")


@dataclass
class MotionConfig:
    kinds: list[str] = field(default_factory=lambda: ["squat", "walk"])
    duration: float = 10.0
    seed: int = 0
    # a directory written by gen-motions; overrides kinds/duration/seed
    library: str | None = None

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in CLIP_KINDS]
        if bad:
            raise ConfigError(f"unknown clip kinds {bad}")
        if not self.kinds and self.library is None:
            raise ConfigError("empty motion set")
        if self.duration < 1.0:
            raise ConfigError("clip duration must be >= 1 s")


@dataclass
class EvalConfig:
    kinds: list[str] = field(default_factory=lambda: ["squat", "walk"])
    episodes: int = 10
    seed: int = 1000
    init_noise: float = 0.02
    noise_level: float = 0.0
    fall_threshold: float = 0.2

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in CLIP_KINDS]
        if bad:
            raise ConfigError(f"unknown clip kinds {bad}")
        if self.episodes < 1 or self.noise_level < 0 or self.init_noise < 0 or self.fall_threshold <= 0:
            raise ConfigError("invalid eval settings")


@dataclass
class RunConfig:
    robot: RobotModel = field(default_factory=RobotModel)
    net: NetConfig = field(default_factory=lambda: NetConfig(obs_dim=15, cmd_dim=9, action_dim=4, critic_dim=39))
    ppo: PpoConfig = field(default_factory=PpoConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    motions: MotionConfig = field(default_factory=MotionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    run_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    if cls is NetConfig:
        # input sizes default to the stock robot; checked against the model at train time
        data = {"obs_dim": 15, "cmd_dim": 9, "action_dim": 4, "critic_dim": 39, **data}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, f"{path}.{key}" if path else key)
        elif typing.get_origin(tp) is tuple and isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    check_dims(cfg)
    return cfg


def check_dims(cfg: RunConfig) -> None:
    from .task import critic_dim, obs_dim

    m = cfg.robot
    want = {"obs_dim": obs_dim(m), "cmd_dim": 5 + m.n_joints, "action_dim": m.n_joints, "critic_dim": critic_dim(m)}
    for k, v in want.items():
        if getattr(cfg.net, k) != v:
            raise ConfigError(f"net.{k}={getattr(cfg.net, k)} but the robot needs {v}")


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    return config_from_dict(data)
