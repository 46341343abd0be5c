"""Run configuration: one JSON file with sections env, rewards, strategy, train, eval.

Defaults are the reference settings for environment, rewards and MAPPO training.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class EnvParams:
    b_max: float = 550.0
    b_swap_range: tuple[int, int] = (80, 150)
    b_init_range: tuple[float, float] = (0.90, 1.00)
    p_dyn_max: float = 0.05
    dt_minutes: float = 0.1
    duration_multiplier_max: float = 1.2
    drain_range: tuple[float, float] = (0.9, 1.1)
    init_idleness: str = "zero"  # "zero" | "saturated"
    saturated_idleness: float | None = None  # minutes; None -> 10 * c_norm

    def validate(self):
        if self.init_idleness not in ("zero", "saturated"):
            raise ConfigError(f"init_idleness must be 'zero' or 'saturated', got {self.init_idleness!r}")
        lo, hi = self.b_swap_range
        if not (1 <= lo <= hi):
            raise ConfigError("b_swap_range must satisfy 1 <= lo <= hi")
        lo, hi = self.b_init_range
        if not (0 < lo <= hi <= 1):
            raise ConfigError("b_init_range must lie in (0, 1]")
        if not (0 <= self.p_dyn_max <= 1):
            raise ConfigError("p_dyn_max must lie in [0, 1]")
        if self.duration_multiplier_max < 1:
            raise ConfigError("duration_multiplier_max must be >= 1")
        if self.b_max <= 0 or self.dt_minutes <= 0:
            raise ConfigError("b_max and dt_minutes must be positive")


@dataclass
class RewardParams:
    c_norm: float = 200.0
    c_rp: float = 0.5
    c_d: float | None = None  # None -> 50 / max_agents
    c_pb: float = 50.0
    c_pbm: float = 20.0
    c_pbb: float = 1.0
    c_pc: float = 1.0
    b_l: float = 0.135

    def validate(self):
        for name in ("c_norm", "c_rp", "c_pb", "c_pbm", "c_pbb", "c_pc"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.c_norm == 0:
            raise ConfigError("c_norm must be > 0")
        if self.c_d is not None and self.c_d < 0:
            raise ConfigError("c_d must be >= 0")
        if not (0 < self.b_l < 1):
            raise ConfigError("b_l must lie in (0, 1)")

    def difference_scale(self, max_agents: int) -> float:
        return self.c_d if self.c_d is not None else 50.0 / max_agents


@dataclass
class StrategyParams:
    sebs_theta: float = 0.5
    sebs_kappa: float = 0.0  # hard exclusion of targets other agents declared
    drain_worst_case: float | None = None  # None -> env drain_range upper bound
    deadlock_patience: int = 2

    def validate(self):
        if self.sebs_theta <= 0:
            raise ConfigError("sebs_theta must be > 0")
        if not (0 <= self.sebs_kappa <= 1):
            raise ConfigError("sebs_kappa must lie in [0, 1]")


@dataclass
class NetConfig:
    conv_channels: tuple[int, ...] = (4, 8)
    dense: tuple[int, ...] = (512, 341, 227)
    n_messages: int = 16
    separate_trunks: bool = False


def _default_curriculum():
    return [
        [0, [1, 1, 1, 1, 2, 2, 2, 2]],
        [200, [1, 1, 1, 1, 2, 2, 3, 3]],
        [400, [1, 1, 1, 1, 2, 3, 3, 4]],
        [600, [1, 1, 1, 1, 2, 3, 4, 5]],
    ]


@dataclass
class TrainConfig:
    gamma: float = 0.95
    gae_lambda: float = 0.95
    clip_eps: float = 0.15
    num_batches: int = 50
    epochs: int = 3
    entropy_coef: float = 0.002
    value_coef: float = 0.5
    lr_schedule: list = field(default_factory=lambda: [[0, 2e-4], [1000, 1e-4]])
    episodes: int = 1500
    horizon: int = 5000
    curriculum: list = field(default_factory=_default_curriculum)
    max_agents: int | None = None  # None -> largest curriculum count
    chunk_length: int = 16
    max_grad_norm: float = 10.0
    checkpoint_every: int = 100
    net: NetConfig = field(default_factory=NetConfig)

    def validate(self):
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ConfigError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be > 0")
        if not self.curriculum or self.curriculum[0][0] != 0:
            raise ConfigError("curriculum must start at episode 0")
        if not self.lr_schedule or self.lr_schedule[0][0] != 0:
            raise ConfigError("lr_schedule must start at episode 0")
        widths = {len(row[1]) for row in self.curriculum}
        if len(widths) != 1:
            raise ConfigError("every curriculum row must list the same number of parallel episodes")
        if self.num_batches < 1 or self.epochs < 1 or self.chunk_length < 1:
            raise ConfigError("num_batches, epochs and chunk_length must be >= 1")

    @property
    def parallel_episodes(self) -> int:
        return len(self.curriculum[0][1])

    def resolved_max_agents(self) -> int:
        if self.max_agents is not None:
            return self.max_agents
        return max(max(row[1]) for row in self.curriculum)

    def agent_counts(self, episode: int) -> list[int]:
        counts = self.curriculum[0][1]
        for start, row in self.curriculum:
            if episode >= start:
                counts = row
        return list(counts)

    def learning_rate(self, episode: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if episode >= start:
                lr = value
        return float(lr)


@dataclass
class EvalConfig:
    horizon: int = 14400
    episodes: int = 100
    n_agents: int = 2
    burnin: int = 0
    require_success: bool = False


@dataclass
class Config:
    env: EnvParams = field(default_factory=EnvParams)
    rewards: RewardParams = field(default_factory=RewardParams)
    strategy: StrategyParams = field(default_factory=StrategyParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        self.env.validate()
        self.rewards.validate()
        self.strategy.validate()
        self.train.validate()
        return self

    def resolved(self) -> "Config":
        """Copy with derived defaults filled in."""
        cfg = from_dict(to_dict(self))
        if cfg.env.saturated_idleness is None:
            cfg.env.saturated_idleness = 10.0 * cfg.rewards.c_norm
        if cfg.strategy.drain_worst_case is None:
            cfg.strategy.drain_worst_case = cfg.env.drain_range[1]
        if cfg.train.max_agents is None:
            cfg.train.max_agents = cfg.train.resolved_max_agents()
        if cfg.rewards.c_d is None:
            cfg.rewards.c_d = cfg.rewards.difference_scale(cfg.train.max_agents)
        return cfg.validate()


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section for {cls.__name__} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            value = _build(type(default), value)
        elif isinstance(default, tuple):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> Config:
    return _build(Config, data).validate()


def to_dict(cfg) -> dict:
    def convert(obj):
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        if isinstance(obj, list):
            return [convert(v) for v in obj]
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        return obj

    return convert(dataclasses.asdict(cfg))


def load_config(path=None) -> Config:
    if path is None:
        return Config().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
