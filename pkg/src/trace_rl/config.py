"""Experiment configuration: JSON schema, defaults and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class Hyperparams:
    # SAC
    ac_hiddens: list[int] = field(default_factory=lambda: [64, 64])
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    tau: float = 0.995
    alpha: float = 0.05
    gamma: float = 0.99
    state_embed_dim: int | None = None
    state_embed_hiddens: list[int] = field(default_factory=lambda: [64])
    state_embed_lr: float = 1e-3
    proto_bound: float | None = 1.0
    # transition model
    action_embed_dim: int = 2
    hiddens: list[int] = field(default_factory=lambda: [64, 32])
    lr: float = 1e-3
    latent: bool = False
    z_dim: int = 8
    z_hiddens: list[int] = field(default_factory=lambda: [32])
    beta: float = 1e-2
    embed_init_scale: float = 0.1
    # loop
    batch_size: int = 128
    warmup_steps: int = 200
    buffer_capacity: int = 100_000
    # offline embedding experiment
    embed_samples: int = 10_000
    embed_epochs: int = 50

    def validate(self) -> None:
        pos_int = ["action_embed_dim", "batch_size", "buffer_capacity", "z_dim", "embed_samples"]
        for name in pos_int:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"hyperparameters.{name} must be a positive integer, got {v!r}")
        for name in ["warmup_steps", "embed_epochs"]:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"hyperparameters.{name} must be a non-negative integer, got {v!r}")
        for name in ["actor_lr", "critic_lr", "lr", "state_embed_lr", "embed_init_scale"]:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"hyperparameters.{name} must be a positive number, got {v!r}")
        for name in ["tau", "gamma"]:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(f"hyperparameters.{name} must lie in [0, 1], got {v!r}")
        if not isinstance(self.alpha, (int, float)) or self.alpha < 0:
            raise ConfigError("hyperparameters.alpha must be >= 0")
        if not isinstance(self.beta, (int, float)) or self.beta < 0:
            raise ConfigError("hyperparameters.beta must be >= 0")
        if self.proto_bound is not None and (not isinstance(self.proto_bound, (int, float)) or self.proto_bound <= 0):
            raise ConfigError("hyperparameters.proto_bound must be positive or null")
        if self.state_embed_dim is not None and (not isinstance(self.state_embed_dim, int) or self.state_embed_dim <= 0):
            raise ConfigError("hyperparameters.state_embed_dim must be a positive integer or null")
        for name in ["ac_hiddens", "hiddens", "z_hiddens", "state_embed_hiddens"]:
            v = getattr(self, name)
            if not isinstance(v, list) or not all(isinstance(h, int) and h > 0 for h in v):
                raise ConfigError(f"hyperparameters.{name} must be a list of positive integers")


@dataclass
class TransferConfig:
    transfer_policy: bool = False
    transfer_transition: bool = False
    freeze_transition: bool = False
    baseline: str = "none"

    def __post_init__(self):
        if self.baseline not in ("none", "bt"):
            raise ConfigError(f"transfer.baseline must be 'none' or 'bt', got {self.baseline!r}")
        if self.freeze_transition and not self.transfer_transition:
            raise ConfigError("transfer.freeze_transition requires transfer_transition")
        if self.baseline == "bt" and (self.transfer_policy or self.transfer_transition):
            raise ConfigError("the bt baseline takes no transfer flags")

    @classmethod
    def preset(cls, name: str) -> "TransferConfig":
        """Named variants: pt, pt-finetune, p, t, none, bt."""
        table = {
            "pt": cls(True, True, True),
            "pt-finetune": cls(True, True, False),
            "p": cls(True, False, False),
            "t": cls(False, True, True),
            "none": cls(),
            "bt": cls(baseline="bt"),
        }
        if name not in table:
            raise ConfigError(f"unknown transfer preset {name!r}")
        return table[name]


ALGORITHMS = ("trace", "trace-no-transfer", "sac-discrete", "bt")
ENV_FAMILIES = {
    "gridworld": {"grid_size", "n_steps", "encoding", "step_reward", "goal_reward", "max_actions"},
    "cartpole": {"gravity", "cart_mass", "pole_mass", "half_length", "dt", "force_levels",
                 "force_range", "angle_limit_deg", "position_limit", "max_steps"},
}
_REQUIRED = ("env", "algorithm", "seeds", "budget")
_OPTIONAL = ("transfer", "hyperparameters", "output_dir")


@dataclass
class ExperimentConfig:
    env: dict[str, Any]
    algorithm: str
    seeds: list[int]
    budget: int
    transfer: TransferConfig = field(default_factory=TransferConfig)
    hyperparameters: Hyperparams = field(default_factory=Hyperparams)
    output_dir: str = "runs"

    @property
    def env_family(self) -> str:
        return self.env["family"]

    @property
    def env_params(self) -> dict[str, Any]:
        return {k: v for k, v in self.env.items() if k != "family"}

    def to_dict(self) -> dict[str, Any]:
        return {
            "env": dict(self.env),
            "algorithm": self.algorithm,
            "seeds": list(self.seeds),
            "budget": self.budget,
            "transfer": asdict(self.transfer),
            "hyperparameters": asdict(self.hyperparameters),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in _REQUIRED:
            if key not in raw:
                raise ConfigError(f"missing required field '{key}'")
        env = raw["env"]
        if not isinstance(env, dict) or "family" not in env:
            raise ConfigError("missing required field 'env.family'")
        family = env["family"]
        if family not in ENV_FAMILIES:
            raise ConfigError(f"env.family must be one of {sorted(ENV_FAMILIES)}, got {family!r}")
        bad = set(env) - {"family"} - ENV_FAMILIES[family]
        if bad:
            raise ConfigError(f"unknown env keys for {family}: {sorted(bad)}")
        if raw["algorithm"] not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {list(ALGORITHMS)}, got {raw['algorithm']!r}")
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        budget = raw["budget"]
        if not isinstance(budget, int) or isinstance(budget, bool) or budget < 0:
            raise ConfigError("budget must be a non-negative integer (episodes)")
        transfer_raw = raw.get("transfer", {})
        tf_names = {f.name for f in fields(TransferConfig)}
        if not isinstance(transfer_raw, dict) or set(transfer_raw) - tf_names:
            raise ConfigError(f"unknown transfer keys: {sorted(set(transfer_raw) - tf_names)}")
        hp_raw = raw.get("hyperparameters", {})
        hp_names = {f.name for f in fields(Hyperparams)}
        if not isinstance(hp_raw, dict) or set(hp_raw) - hp_names:
            raise ConfigError(f"unknown hyperparameter keys: {sorted(set(hp_raw) - hp_names)}")
        hp = Hyperparams(**hp_raw)
        hp.validate()
        cfg = cls(
            env=dict(env),
            algorithm=raw["algorithm"],
            seeds=list(seeds),
            budget=budget,
            transfer=TransferConfig(**transfer_raw),
            hyperparameters=hp,
            output_dir=str(raw.get("output_dir", "runs")),
        )
        if cfg.algorithm == "bt" and cfg.transfer.baseline != "bt":
            cfg.transfer = TransferConfig(baseline="bt")
        return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
